//! Subcommand table and implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use terraseg::dataset::{self, DatasetManifest, Sample, Split, SplitCounts, SynthTextureSpec};
use terraseg::io;
use terraseg::lbp::{texture_target, LbpConfig};
use terraseg::mask::{to_patch_mask, MaskKind};
use terraseg::metrics::ConfusionMatrix;
use terraseg::nn::checkpoint;
use terraseg::nn::refnet::RefNet;
use terraseg::train::{self, TrainConfig, TrainLog, CONFIG_KEYS};

use crate::fail::Failure;
use crate::params::{key, optional, Key, Params};
use crate::svg::{line_chart, Series};
use crate::write;

pub struct Spec {
    pub name: &'static str,
    pub about: &'static str,
    pub keys: &'static [Key],
    pub train: &'static [&'static str],
    pub run: fn(&Params, &Path) -> Result<(), Failure>,
}

const OUT: Key = optional("out", "output directory (required)");
const DATA: Key = optional("data", "dataset directory containing manifest.csv (required)");
const INIT: Key = optional("init", "pre-trained checkpoint whose encoder initializes fine-tuning");

const MASK_KEYS: &[&str] = &[
    "seed",
    "mask",
    "mask_ratio",
    "strokes",
    "segments",
    "stroke_length",
    "thickness",
    "max_rounds",
    "patch",
];

pub const COMMANDS: &[Spec] = &[
    Spec {
        name: "synth",
        about: "Generate a synthetic sparse-label texture dataset",
        keys: &[
            OUT,
            key("n", "200", "number of samples"),
            key("seed", "0", "generation and split seed"),
            key("height", "64", "image height"),
            key("width", "64", "image width"),
            key("categories", "4", "number of texture categories"),
            key("erosion", "3", "boundary band left unlabeled, in pixels"),
            key("dropout", "0", "probability of dropping each remaining label"),
            key("noise", "0.08", "sensor noise standard deviation"),
            key("amplitude", "0.05,0.12", "min,max texture amplitude per region"),
            key("splits", "auto", "train,val,test counts; auto = 5000:200:800 proportions"),
        ],
        train: &[],
        run: synth,
    },
    Spec {
        name: "lbp-extract",
        about: "Compute LBP code maps and patch histograms",
        keys: &[
            OUT,
            optional("image", "single PNG to process"),
            optional("data", "dataset directory; every manifest image is processed"),
            key("lbp_points", "24", "LBP neighbour count P"),
            key("lbp_radius", "3", "LBP radius R"),
            key("patch", "32", "histogram patch size"),
        ],
        train: &[],
        run: lbp_extract,
    },
    Spec {
        name: "mask-gen",
        about: "Generate masks and report their realized ratios",
        keys: &[
            OUT,
            key("n", "100", "number of masks"),
            key("height", "64", "mask height"),
            key("width", "64", "mask width"),
        ],
        train: MASK_KEYS,
        run: mask_gen,
    },
    Spec {
        name: "stats",
        about: "Label counts and category area shares of a dataset",
        keys: &[OUT, DATA],
        train: &[],
        run: stats,
    },
    Spec {
        name: "pretrain",
        about: "Masked inpainting and texture pre-training",
        keys: &[OUT, DATA],
        train: CONFIG_KEYS,
        run: pretrain,
    },
    Spec {
        name: "finetune",
        about: "Supervised and pseudo-labeled fine-tuning, then test evaluation",
        keys: &[OUT, DATA, INIT],
        train: CONFIG_KEYS,
        run: finetune,
    },
    Spec {
        name: "eval",
        about: "Evaluate a checkpoint or a directory of prediction PNGs",
        keys: &[
            OUT,
            DATA,
            optional("checkpoint", "network checkpoint to evaluate"),
            optional("predictions", "directory of label PNGs named like the dataset's label files"),
            key("split", "test", "train, val or test"),
        ],
        train: &[],
        run: eval,
    },
    Spec {
        name: "sweep-threshold",
        about: "Fine-tune once per certainty threshold and report coverage and mIoU",
        keys: &[
            OUT,
            DATA,
            INIT,
            key("thresholds", "0.3,0.5,0.7,0.9,0.99,0.999", "comma-separated thresholds"),
        ],
        train: CONFIG_KEYS,
        run: sweep_threshold,
    },
    Spec {
        name: "sweep-mask",
        about: "Pre-train and fine-tune once per mask type and ratio",
        keys: &[
            OUT,
            DATA,
            key("masks", "rect,patch,freeform", "comma-separated mask types"),
            key("ratios", "0.3,0.4,0.5,0.6,0.7", "comma-separated mask ratios"),
        ],
        train: CONFIG_KEYS,
        run: sweep_mask,
    },
    Spec {
        name: "report",
        about: "Render a CSV file as an SVG line chart",
        keys: &[
            OUT,
            optional("input", "CSV file to plot (required)"),
            key("x", "step", "column for the horizontal axis"),
            optional("y", "comma-separated columns to plot; default all numeric columns"),
            optional("group", "column whose values split the rows into separate series"),
            optional("title", "chart title; default the input file name"),
        ],
        train: &[],
        run: report,
    },
];

fn list<T: std::str::FromStr>(p: &Params, key: &str) -> Result<Vec<T>, Failure> {
    let raw: String = p.get(key)?;
    raw.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Failure::config(format!("--{}: cannot parse {v:?}", crate::params::flag_name(key))))
        })
        .collect()
}

struct Dataset {
    root: PathBuf,
    manifest: DatasetManifest,
}

impl Dataset {
    fn open(p: &Params, out: &Path) -> Result<Self, Failure> {
        let root = p.path("data")?;
        if same_dir(&root, out) {
            return Err(Failure::config("--out must differ from --data; inputs are never modified"));
        }
        let manifest = DatasetManifest::load(&root.join("manifest.csv"))?;
        Ok(Self { root, manifest })
    }

    fn split(&self, split: Split) -> Result<Vec<Sample>, Failure> {
        Ok(self.manifest.load_split(&self.root, split)?)
    }

    fn categories(&self) -> usize {
        self.manifest.categories.len()
    }

    fn nonempty(&self, split: Split) -> Result<Vec<Sample>, Failure> {
        let s = self.split(split)?;
        if s.is_empty() {
            return Err(Failure::data(format!("the {} split is empty", split.name())));
        }
        Ok(s)
    }
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => a == b,
    }
}

fn load_init(p: &Params) -> Result<Option<RefNet<f32>>, Failure> {
    p.opt_path("init").map(|path| checkpoint::load(&path)).transpose().map_err(Failure::from)
}

fn metrics_csv(cm: &ConfusionMatrix, data: &Dataset) -> Result<String, Failure> {
    Ok(cm.to_csv(&data.manifest.categories)?)
}

fn synth(p: &Params, out: &Path) -> Result<(), Failure> {
    let n: usize = p.get("n")?;
    let seed: u64 = p.get("seed")?;
    let mut spec = SynthTextureSpec::new(p.get("height")?, p.get("width")?, p.get("categories")?)
        .map_err(|e| Failure::config(e.to_string()))?;
    spec.erosion = p.get("erosion")?;
    spec.dropout = p.get("dropout")?;
    spec.noise = p.get("noise")?;
    spec.amplitude = match list::<f64>(p, "amplitude")?[..] {
        [lo, hi] => (lo, hi),
        _ => return Err(Failure::config("amplitude expects min,max")),
    };
    spec.validate().map_err(|e| Failure::config(e.to_string()))?;
    let counts = match p.raw("splits") {
        Some("auto") | None => SplitCounts::standard_proportions(n),
        Some(v) => {
            let parts: Vec<usize> = list(p, "splits")?;
            match parts[..] {
                [train, val, test] => SplitCounts { train, val, test },
                _ => return Err(Failure::config(format!("--splits: expected train,val,test, got {v:?}"))),
            }
        }
    };
    if counts.total() != n {
        return Err(Failure::config(format!("split counts sum to {}, expected {n}", counts.total())));
    }
    let samples = dataset::synth_generate(&spec, n, seed)?;
    let manifest = dataset::write_synth(out, &spec, &samples, counts, seed)?;
    println!(
        "wrote {n} samples to {} (train {}, val {}, test {})",
        out.display(),
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test)
    );
    Ok(())
}

fn lbp_extract(p: &Params, out: &Path) -> Result<(), Failure> {
    let cfg = LbpConfig::new(p.get("lbp_points")?, p.get("lbp_radius")?).map_err(|e| Failure::config(e.to_string()))?;
    let patch: usize = p.get("patch")?;
    if patch == 0 {
        return Err(Failure::config("--patch must be positive"));
    }
    let images: Vec<PathBuf> = match (p.opt_path("image"), p.opt_path("data")) {
        (Some(img), None) => vec![img],
        (None, Some(_)) => {
            let data = Dataset::open(p, out)?;
            data.manifest.entries.iter().map(|e| data.root.join(&e.image)).collect()
        }
        _ => return Err(Failure::usage("give exactly one of --image or --data")),
    };
    let mut index = String::from("image,codes,histograms,grid_h,grid_w,bins\n");
    for path in &images {
        let img = io::read_image(path)?;
        let gray = terraseg::imaging::to_grayscale(&img)?;
        let codes = terraseg::lbp::lbp_map(&gray, &cfg)?;
        let hist = texture_target(&img, &cfg, patch)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
        let code_path = format!("codes/{stem}.png");
        let hist_path = format!("histograms/{stem}.bin");
        io::write_gray_png(&out.join(&code_path), codes.width(), codes.height(), &codes.to_display_u8())?;
        write(&out.join(&hist_path), &hist.to_bytes())?;
        writeln!(
            index,
            "{},{code_path},{hist_path},{},{},{}",
            path.display(),
            hist.grid_h(),
            hist.grid_w(),
            hist.bins()
        )
        .unwrap();
    }
    write(&out.join("lbp_index.csv"), index.as_bytes())?;
    println!("processed {} images", images.len());
    Ok(())
}

fn mask_gen(p: &Params, out: &Path) -> Result<(), Failure> {
    let cfg = p.train_config()?;
    let n: u64 = p.get("n")?;
    let (h, w): (usize, usize) = (p.get("height")?, p.get("width")?);
    let strategy = cfg.mask_strategy(h, w);
    let mut csv = String::from("index,seed,ratio,masked_patches\n");
    let mut ratios = Vec::new();
    for i in 0..n {
        let seed = cfg.seed.wrapping_add(i);
        let m = strategy.generate(h, w, seed)?;
        let patches = if h % cfg.patch == 0 && w % cfg.patch == 0 {
            to_patch_mask(&m, cfg.patch)?.count().to_string()
        } else {
            String::new()
        };
        io::write_gray_png(&out.join(format!("masks/{i:05}.png")), w, h, &m.to_u8())?;
        writeln!(csv, "{i},{seed},{:.6},{patches}", m.ratio()).unwrap();
        ratios.push(m.ratio());
    }
    write(&out.join("calibration.csv"), csv.as_bytes())?;
    if !ratios.is_empty() {
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let summary = format!(
            "mask,target_ratio,mean_ratio,min_ratio,max_ratio,count\n{},{},{mean:.6},{lo:.6},{hi:.6},{n}\n",
            strategy.kind(),
            strategy.ratio()
        );
        write(&out.join("calibration_summary.csv"), summary.as_bytes())?;
        println!("{} masks, mean ratio {mean:.4} (target {})", n, strategy.ratio());
    }
    Ok(())
}

fn stats(p: &Params, out: &Path) -> Result<(), Failure> {
    let data = Dataset::open(p, out)?;
    let s = dataset::stats(&data.manifest, &data.root)?;
    write(&out.join("stats.csv"), s.to_csv(&data.manifest.categories).as_bytes())?;
    println!("{} images, unlabeled fraction {:.4}", s.images, s.unlabeled_fraction());
    Ok(())
}

fn save_log(out: &Path, name: &str, log: &TrainLog) -> Result<(), Failure> {
    write(&out.join(name), log.to_csv().as_bytes())
}

fn pretrain(p: &Params, out: &Path) -> Result<(), Failure> {
    let cfg = p.train_config()?;
    let data = Dataset::open(p, out)?;
    let train = data.nonempty(Split::Train)?;
    let (net, log) = train::pretrain(&cfg, &train, data.categories())?;
    checkpoint::save(&out.join("pretrain.bin"), &net)?;
    save_log(out, "pretrain_log.csv", &log)?;
    println!("pre-trained {} steps, final loss {:.6}", cfg.pretrain_steps, log.totals().last().copied().unwrap_or(0.0));
    Ok(())
}

fn finetune(p: &Params, out: &Path) -> Result<(), Failure> {
    let cfg = p.train_config()?;
    let data = Dataset::open(p, out)?;
    let init = load_init(p)?;
    let train = data.nonempty(Split::Train)?;
    let val = data.split(Split::Val)?;
    let (net, log) = train::finetune(&cfg, &train, &val, data.categories(), init.as_ref())?;
    checkpoint::save(&out.join("finetune.bin"), &net)?;
    save_log(out, "finetune_log.csv", &log)?;
    let test = data.split(Split::Test)?;
    if !test.is_empty() {
        let cm = train::evaluate(&net, &test)?;
        write(&out.join("metrics.csv"), metrics_csv(&cm, &data)?.as_bytes())?;
        println!("test mIoU {:.4}", cm.miou()?);
    }
    Ok(())
}

fn eval(p: &Params, out: &Path) -> Result<(), Failure> {
    let data = Dataset::open(p, out)?;
    let split: Split = p.get::<String>("split")?.parse().map_err(|e: terraseg::Error| Failure::config(e.to_string()))?;
    let samples = data.nonempty(split)?;
    let cm = match (p.opt_path("checkpoint"), p.opt_path("predictions")) {
        (Some(ck), None) => {
            let net = checkpoint::load(&ck)?;
            if net.config.categories != data.categories() {
                return Err(Failure::data(format!(
                    "checkpoint predicts {} categories, dataset has {}",
                    net.config.categories,
                    data.categories()
                )));
            }
            train::evaluate(&net, &samples)?
        }
        (None, Some(dir)) => {
            let mut cm = ConfusionMatrix::new(data.categories());
            for (entry, s) in data.manifest.split_entries(split).zip(&samples) {
                let name = entry
                    .label
                    .file_name()
                    .ok_or_else(|| Failure::data(format!("bad label path {}", entry.label.display())))?;
                let pred = io::read_labels(&dir.join(name), data.categories())?;
                cm.accumulate(&pred, &s.labels)?;
            }
            cm
        }
        _ => return Err(Failure::usage("give exactly one of --checkpoint or --predictions")),
    };
    write(&out.join("metrics.csv"), metrics_csv(&cm, &data)?.as_bytes())?;
    let s = cm.summary()?;
    println!("ACC {:.4} MACC {:.4} mIoU {:.4} FWIoU {:.4}", s.acc, s.macc, s.miou, s.fwiou);
    Ok(())
}

/// Mean pseudo-label coverage over the steps where pseudo-labeling ran.
fn mean_coverage(log: &TrainLog) -> f64 {
    let active: Vec<f64> = log.records.iter().filter(|r| r.pseudo_active).map(|r| r.losses.coverage).collect();
    if active.is_empty() {
        0.0
    } else {
        active.iter().sum::<f64>() / active.len() as f64
    }
}

fn sweep_threshold(p: &Params, out: &Path) -> Result<(), Failure> {
    let base = p.train_config()?;
    let thresholds: Vec<f64> = list(p, "thresholds")?;
    let data = Dataset::open(p, out)?;
    let init = load_init(p)?;
    let train = data.nonempty(Split::Train)?;
    let val = data.split(Split::Val)?;
    let test = data.nonempty(Split::Test)?;
    let mut csv = String::from("threshold,coverage,miou\n");
    for &t in &thresholds {
        let cfg = TrainConfig { threshold: t, ..base.clone() };
        cfg.validate().map_err(|e| Failure::config(e.to_string()))?;
        let (net, log) = train::finetune(&cfg, &train, &val, data.categories(), init.as_ref())?;
        let miou = train::evaluate(&net, &test)?.miou()?;
        writeln!(csv, "{t},{:.6},{miou:.6}", mean_coverage(&log)).unwrap();
        println!("t = {t}: mIoU {miou:.4}");
        write(&out.join("threshold_sweep.csv"), csv.as_bytes())?;
    }
    Ok(())
}

fn sweep_mask(p: &Params, out: &Path) -> Result<(), Failure> {
    let base = p.train_config()?;
    let masks: Vec<MaskKind> = list(p, "masks")?;
    let ratios: Vec<f64> = list(p, "ratios")?;
    let data = Dataset::open(p, out)?;
    let train = data.nonempty(Split::Train)?;
    let val = data.split(Split::Val)?;
    let test = data.nonempty(Split::Test)?;
    let mut csv = String::from("mask,ratio,miou\n");
    for &mask in &masks {
        for &ratio in &ratios {
            let cfg = TrainConfig {
                mask,
                mask_ratio: ratio,
                ..base.clone()
            };
            cfg.validate().map_err(|e| Failure::config(e.to_string()))?;
            let (pre, _) = train::pretrain(&cfg, &train, data.categories())?;
            let (net, _) = train::finetune(&cfg, &train, &val, data.categories(), Some(&pre))?;
            let miou = train::evaluate(&net, &test)?.miou()?;
            writeln!(csv, "{mask},{ratio},{miou:.6}").unwrap();
            println!("{mask} {ratio}: mIoU {miou:.4}");
            write(&out.join("mask_sweep.csv"), csv.as_bytes())?;
        }
    }
    Ok(())
}

fn report(p: &Params, out: &Path) -> Result<(), Failure> {
    let input = p.path("input")?;
    let text = io::read_text(&input)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Failure::data(format!("{} is empty", input.display())))?
        .split(',')
        .map(str::trim)
        .collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').map(str::trim).collect()).collect();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Failure::config(format!("{} has no column {name:?}", input.display())))
    };
    let x_name: String = p.get("x")?;
    let xi = column(&x_name)?;
    let group = p.raw("group").map(column).transpose()?;
    let ys: Vec<usize> = match p.raw("y") {
        Some(v) => v.split(',').map(|c| column(c.trim())).collect::<Result<_, _>>()?,
        None => (0..header.len())
            .filter(|&i| i != xi && Some(i) != group)
            .filter(|&i| rows.iter().any(|r| r.get(i).is_some_and(|v| v.parse::<f64>().is_ok())))
            .collect(),
    };
    if ys.is_empty() {
        return Err(Failure::data("no numeric column to plot"));
    }
    let mut groups: Vec<String> = Vec::new();
    for r in &rows {
        let g = group.and_then(|g| r.get(g)).unwrap_or(&"").to_string();
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    let mut series = Vec::new();
    for &yi in &ys {
        for g in &groups {
            let points = rows
                .iter()
                .filter(|r| group.and_then(|gi| r.get(gi)).unwrap_or(&"") == g)
                .filter_map(|r| Some((r.get(xi)?.parse().ok()?, r.get(yi)?.parse().ok()?)))
                .collect();
            let name = if g.is_empty() { header[yi].to_string() } else { format!("{} ({g})", header[yi]) };
            series.push(Series { name, points });
        }
    }
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into());
    let title = p.raw("title").map(str::to_string).unwrap_or_else(|| stem.clone());
    let y_label = ys.iter().map(|&i| header[i]).collect::<Vec<_>>().join(", ");
    let svg = line_chart(&title, &x_name, &y_label, &series);
    let path = out.join(format!("{stem}.svg"));
    write(&path, svg.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

