use terraseg::dataset::{synth_generate, Sample, SynthTextureSpec};
use terraseg::nn::refnet::RefNet;
use terraseg::train::{evaluate, finetune, pretrain, TrainConfig, TrainLog};

fn samples(n: usize, seed: u64) -> Vec<Sample> {
    synth_generate(&SynthTextureSpec::default(), n, seed)
        .unwrap()
        .iter()
        .map(|s| s.to_sample())
        .collect()
}

fn short(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        pretrain_steps: 12,
        finetune_steps: 20,
        batch: 2,
        ..TrainConfig::default()
    }
}

/// The log without wall-clock times.
fn timeless(log: &TrainLog) -> Vec<String> {
    log.to_csv().lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
}

#[test]
fn pretrain_loss_decreases() {
    // Strong textures and little sensor noise.
    let mut spec = SynthTextureSpec::default();
    spec.noise = 0.01;
    spec.amplitude = (0.15, 0.3);
    let data: Vec<Sample> = synth_generate(&spec, 64, 5).unwrap().iter().map(|s| s.to_sample()).collect();
    let cfg = TrainConfig {
        pretrain_steps: 400,
        ..TrainConfig::default()
    };
    let (_, log) = pretrain(&cfg, &data, 4).unwrap();
    let t = log.totals();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (first, last) = (mean(&t[..20]), mean(&t[t.len() - 100..]));
    assert!(last < 0.9 * first, "loss {first} -> {last}");
}

#[test]
fn training_is_deterministic() {
    let data = samples(12, 1);
    let cfg = short(3);
    let (a, la) = pretrain(&cfg, &data, 4).unwrap();
    let (b, lb) = pretrain(&cfg, &data, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(timeless(&la), timeless(&lb));
    let (fa, lfa) = finetune(&cfg, &data, &data[..2], 4, Some(&a)).unwrap();
    let (fb, lfb) = finetune(&cfg, &data, &data[..2], 4, Some(&b)).unwrap();
    assert_eq!(fa, fb);
    assert_eq!(timeless(&lfa), timeless(&lfb));
    assert_eq!(evaluate(&fa, &data).unwrap(), evaluate(&fb, &data).unwrap());
    let other = TrainConfig { seed: 4, ..cfg };
    assert_ne!(pretrain(&other, &data, 4).unwrap().0, a);
}

#[test]
fn zero_pseudo_weight_is_supervised_training() {
    let data = samples(12, 2);
    let run = |threshold: f64, pseudo_start: Option<usize>| {
        let cfg = TrainConfig {
            threshold,
            pseudo_start,
            ..short(1)
        };
        let mut cfg = cfg;
        cfg.weights.pseudo = 0.0;
        finetune(&cfg, &data, &[], 4, None).unwrap()
    };
    let (base, log) = run(0.9, None);
    assert!(log.records.iter().all(|r| !r.pseudo_active && r.losses.pseudo == 0.0));
    for (t, start) in [(0.3, None), (0.999, Some(0)), (0.0, Some(5))] {
        let (net, other) = run(t, start);
        assert_eq!(net, base, "threshold {t}");
        assert_eq!(timeless(&other), timeless(&log));
    }
}

#[test]
fn pseudo_labels_never_overwrite_ground_truth() {
    let data = samples(12, 3);
    for threshold in [0.0, 0.5] {
        let cfg = TrainConfig {
            threshold,
            pseudo_start: Some(0),
            ..short(2)
        };
        let (_, log) = finetune(&cfg, &data, &[], 4, None).unwrap();
        assert!(log.records.iter().all(|r| r.pseudo_active));
        assert_eq!(log.gt_overwrites(), 0);
        assert!(log.records.iter().any(|r| r.losses.coverage > 0.0));
    }
}

#[test]
fn untrained_network_is_near_chance() {
    let data = samples(100, 9);
    let cfg = TrainConfig::default();
    let accs: Vec<f64> = (0..8)
        .map(|seed| {
            let net = RefNet::<f32>::init(cfg.network(3, 64, 64, 4), seed).unwrap();
            evaluate(&net, &data).unwrap().acc().unwrap()
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.25).abs() <= 0.1, "{accs:?}");
}

#[test]
fn empty_evaluation_split_is_an_error() {
    let net = RefNet::<f32>::init(TrainConfig::default().network(3, 64, 64, 4), 0).unwrap();
    assert!(evaluate(&net, &[]).is_err());
}
