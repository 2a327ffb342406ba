use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_terraseg");
const FAST: &[&str] = &["--pretrain-steps", "4", "--finetune-steps", "6", "--batch", "2"];

fn run(args: &[&str]) -> Output {
    run_env(args, &[])
}

fn run_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    for (k, v) in std::env::vars() {
        if k.starts_with("TERRASEG_") {
            cmd.env_remove(k);
        }
    }
    cmd.envs(env.iter().copied());
    cmd.output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn synth(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&["synth", "--n", "24", "--seed", "3", "--splits", "16,4,4", "--out", s(&data)]);
    data
}

fn error_line(out: &Output) -> String {
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(err.lines().count(), 1, "{err}");
    err
}

#[test]
fn synth_is_byte_identical() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for d in [&a, &b] {
        ok(&["synth", "--n", "20", "--seed", "7", "--out", s(d)]);
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.contains_key(Path::new("manifest.csv")));
    assert!(ta.contains_key(Path::new("config.txt")));
    assert_eq!(ta.len(), 20 * 3 + 2);
    assert_eq!(ta, tb);
}

#[test]
fn eval_of_oracle_labels_is_perfect() {
    let t = tempfile::tempdir().unwrap();
    let data = synth(t.path());
    let out = t.path().join("eval");
    ok(&["eval", "--data", s(&data), "--predictions", s(&data.join("oracle")), "--out", s(&out)]);
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.lines().any(|l| l == "mIoU,,1.000000,"), "{csv}");
}

#[test]
fn threshold_sweep_has_one_row_per_threshold() {
    let t = tempfile::tempdir().unwrap();
    let data = synth(t.path());
    let out = t.path().join("sweep");
    let mut args = vec!["sweep-threshold", "--data", s(&data), "--out", s(&out)];
    args.extend(FAST);
    ok(&args);
    let csv = std::fs::read_to_string(out.join("threshold_sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "threshold,coverage,miou");
    let ts: Vec<f64> = lines[1..].iter().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(ts, [0.3, 0.5, 0.7, 0.9, 0.99, 0.999]);
    for l in &lines[1..] {
        let cols: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
        assert!((0.0..=1.0).contains(&cols[1]) && (0.0..=1.0).contains(&cols[2]));
    }
}

#[test]
fn pipeline_runs_and_leaves_inputs_untouched() {
    let t = tempfile::tempdir().unwrap();
    let data = synth(t.path());
    let before = tree(&data);
    let (pre, ft) = (t.path().join("pre"), t.path().join("ft"));
    let mut args = vec!["pretrain", "--data", s(&data), "--out", s(&pre)];
    args.extend(FAST);
    ok(&args);
    let init = pre.join("pretrain.bin");
    let mut args = vec!["finetune", "--data", s(&data), "--init", s(&init), "--out", s(&ft)];
    args.extend(FAST);
    ok(&args);
    for f in ["finetune.bin", "finetune_log.csv", "metrics.csv", "config.txt"] {
        assert!(ft.join(f).exists(), "{f}");
    }
    let rep = t.path().join("report");
    ok(&["report", "--input", s(&ft.join("finetune_log.csv")), "--y", "total,ce", "--out", s(&rep)]);
    assert!(std::fs::read_to_string(rep.join("finetune_log.svg")).unwrap().starts_with("<svg"));

    // The persisted config alone reproduces the run.
    let again = t.path().join("again");
    ok(&["finetune", "--config", s(&ft.join("config.txt")), "--out", s(&again)]);
    assert_eq!(
        std::fs::read(ft.join("metrics.csv")).unwrap(),
        std::fs::read(again.join("metrics.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(ft.join("finetune.bin")).unwrap(),
        std::fs::read(again.join("finetune.bin")).unwrap()
    );
    assert_eq!(tree(&data), before);
}

#[test]
fn precedence_is_file_then_env_then_flag() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("c.txt");
    std::fs::write(&cfg, "command = mask-gen\nn = 3\nmask = rect\nmask_ratio = 0.3\n").unwrap();
    let out = t.path().join("m");
    let o = run_env(
        &["mask-gen", "--config", s(&cfg), "--mask-ratio", "0.5", "--out", s(&out)],
        &[("TERRASEG_N", "4"), ("TERRASEG_MASK_RATIO", "0.4")],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let written = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(written.contains("n = 4\n"), "{written}");
    assert!(written.contains("mask = rect\n"));
    assert!(written.contains("mask_ratio = 0.5\n"));
    assert_eq!(std::fs::read_dir(out.join("masks")).unwrap().count(), 4);
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("o");
    let code = |o: &Output| o.status.code().unwrap();

    let o = run(&["frobnicate"]);
    assert_eq!(code(&o), 2);
    assert!(error_line(&o).starts_with("error: code=usage "));
    assert_eq!(code(&run(&["synth", "--no-such-flag", "1", "--out", s(&out)])), 2);
    assert_eq!(code(&run(&["synth"])), 2);
    assert_eq!(code(&run(&["eval", "--data", s(t.path()), "--out", s(&out)])), 3);

    let o = run(&["stats", "--data", s(&t.path().join("missing")), "--out", s(&out)]);
    assert_eq!(code(&o), 3);
    assert!(error_line(&o).starts_with("error: code=io "));

    let o = run(&["synth", "--n", "ten", "--out", s(&out)]);
    assert_eq!(code(&o), 4);
    assert!(error_line(&o).starts_with("error: code=config "));
    assert_eq!(code(&run(&["mask-gen", "--mask-ratio", "1.5", "--out", s(&out)])), 4);
    let cfg = t.path().join("wrong.txt");
    std::fs::write(&cfg, "command = synth\n").unwrap();
    assert_eq!(code(&run(&["stats", "--config", s(&cfg), "--out", s(&out)])), 4);

    let bad = t.path().join("bad");
    std::fs::create_dir_all(&bad).unwrap();
    std::fs::write(bad.join("manifest.csv"), "not,a\n").unwrap();
    let o = run(&["stats", "--data", s(&bad), "--out", s(&out)]);
    assert_eq!(code(&o), 5);
    assert!(error_line(&o).starts_with("error: code=data "));

    let data = synth(t.path());
    let mut args = vec!["finetune", "--data", s(&data), "--out", s(&out), "--lr", "1e12"];
    args.extend(FAST);
    let o = run(&args);
    assert_eq!(code(&o), 6);
    assert!(error_line(&o).starts_with("error: code=divergence "));
}
