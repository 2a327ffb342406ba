//! Self-supervised pre-training, semi-supervised fine-tuning and evaluation.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::imaging::{ImageTensor, SparseLabelMap, UNLABELED};
use crate::lbp::{texture_target, LbpConfig};
use crate::loss::{self, LossValue, LossWeights};
use crate::mask::{to_patch_mask, BinaryMask, FreeformParams, MaskKind, MaskStrategy, PatchMask};
use crate::metrics::ConfusionMatrix;
use crate::nn::ops::Scalar;
use crate::nn::refnet::{Heads, OutputGrads, RefNet, RefNetConfig};
use crate::pseudo::{self, CertaintyMap, PseudoGate, ThresholdPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// SGD with heavy-ball momentum.
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::invalid(format!("unknown optimizer {other:?} (sgd, adam)"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch: usize,
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
    /// First fine-tuning step with pseudo-labels; `None` means `0.6 · finetune_steps`.
    pub pseudo_start: Option<usize>,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub mask: MaskKind,
    pub mask_ratio: f64,
    pub strokes: (usize, usize),
    pub segments: (usize, usize),
    /// Stroke segment length range; `None` scales with the image.
    pub stroke_length: Option<(f64, f64)>,
    /// Brush diameter range; `None` scales with the image.
    pub thickness: Option<(f64, f64)>,
    pub max_rounds: usize,
    pub lbp: LbpConfig,
    pub patch: usize,
    pub weights: LossWeights,
    /// Weight of the discriminator's dice loss.
    pub lambda_dice: f64,
    /// Dice classes for the discriminator: 1 scores the labeled class only,
    /// 2 averages labeled and unlabeled.
    pub dice_classes: usize,
    /// Certainty gate; `0` disables gating.
    pub threshold: f64,
    pub widths: Vec<usize>,
    /// Validation interval during fine-tuning; `0` disables it.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let ff = FreeformParams::for_image(64, 64, 0.6);
        Self {
            seed: 0,
            batch: 8,
            pretrain_steps: 400,
            finetune_steps: 1000,
            pseudo_start: None,
            optimizer: OptimizerKind::Sgd,
            lr: 0.05,
            momentum: 0.9,
            mask: MaskKind::Freeform,
            mask_ratio: MaskKind::Freeform.default_ratio(),
            strokes: ff.strokes,
            segments: ff.segments,
            stroke_length: None,
            thickness: None,
            max_rounds: ff.max_rounds,
            lbp: LbpConfig::default(),
            patch: 32,
            weights: LossWeights::default(),
            lambda_dice: 1.0,
            dice_classes: 2,
            threshold: ThresholdPolicy::default().threshold(),
            widths: vec![8, 16, 32],
            eval_every: 0,
        }
    }
}

/// Configuration keys, in file order.
pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "batch",
    "pretrain_steps",
    "finetune_steps",
    "pseudo_start",
    "optimizer",
    "lr",
    "momentum",
    "mask",
    "mask_ratio",
    "strokes",
    "segments",
    "stroke_length",
    "thickness",
    "max_rounds",
    "lbp_points",
    "lbp_radius",
    "patch",
    "lambda_inp",
    "lambda_lbp",
    "lambda_ce",
    "lambda_pseudo",
    "lambda_dice",
    "dice_classes",
    "threshold",
    "widths",
    "eval_every",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::invalid(format!("{key}: cannot parse {v:?}")))
}

fn parse_pair<T: std::str::FromStr>(key: &str, v: &str) -> Result<(T, T)> {
    let (a, b) = v
        .split_once(',')
        .ok_or_else(|| Error::invalid(format!("{key}: expected `min,max`, got {v:?}")))?;
    Ok((parse_num(key, a)?, parse_num(key, b)?))
}

fn parse_auto_pair(key: &str, v: &str) -> Result<Option<(f64, f64)>> {
    if v.trim() == "auto" {
        Ok(None)
    } else {
        parse_pair(key, v).map(Some)
    }
}

fn fmt_auto_pair(v: Option<(f64, f64)>) -> String {
    v.map(|(a, b)| format!("{a},{b}")).unwrap_or_else(|| "auto".into())
}

impl TrainConfig {
    pub fn pseudo_start_step(&self) -> usize {
        self.pseudo_start
            .unwrap_or_else(|| (0.6 * self.finetune_steps as f64).round() as usize)
    }

    pub fn gate(&self) -> Result<PseudoGate> {
        if self.threshold == 0.0 {
            Ok(PseudoGate::Ungated)
        } else {
            Ok(PseudoGate::Threshold(ThresholdPolicy::new(self.threshold)?))
        }
    }

    pub fn mask_strategy(&self, height: usize, width: usize) -> MaskStrategy {
        match MaskStrategy::new(self.mask, height, width, self.mask_ratio, self.patch) {
            MaskStrategy::Freeform(mut p) => {
                p.strokes = self.strokes;
                p.segments = self.segments;
                if let Some(l) = self.stroke_length {
                    p.length = l;
                }
                if let Some(t) = self.thickness {
                    p.thickness = t;
                }
                p.max_rounds = self.max_rounds;
                MaskStrategy::Freeform(p)
            }
            other => other,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.pretrain_steps == 0 || self.finetune_steps == 0 {
            return Err(Error::invalid("batch and step counts must be positive"));
        }
        if self.pseudo_start_step() >= self.finetune_steps {
            return Err(Error::invalid(format!(
                "pseudo_start {} must be below finetune_steps {}",
                self.pseudo_start_step(),
                self.finetune_steps
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("lr must be positive and momentum in [0, 1)"));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::invalid(format!("mask_ratio {} outside (0, 1)", self.mask_ratio)));
        }
        if !(self.lambda_dice >= 0.0 && self.lambda_dice.is_finite()) {
            return Err(Error::invalid("lambda_dice must be nonnegative"));
        }
        if !(1..=2).contains(&self.dice_classes) {
            return Err(Error::invalid("dice_classes must be 1 or 2"));
        }
        self.lbp.validate()?;
        self.weights.validate()?;
        self.gate()?;
        if let MaskStrategy::Freeform(p) = self.mask_strategy(64, 64) {
            p.validate()?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "batch" => self.batch = parse_num(key, v)?,
            "pretrain_steps" => self.pretrain_steps = parse_num(key, v)?,
            "finetune_steps" => self.finetune_steps = parse_num(key, v)?,
            "pseudo_start" => {
                self.pseudo_start = if v == "auto" { None } else { Some(parse_num(key, v)?) }
            }
            "optimizer" => self.optimizer = v.parse()?,
            "lr" => self.lr = parse_num(key, v)?,
            "momentum" => self.momentum = parse_num(key, v)?,
            "mask" => self.mask = v.parse()?,
            "mask_ratio" => self.mask_ratio = parse_num(key, v)?,
            "strokes" => self.strokes = parse_pair(key, v)?,
            "segments" => self.segments = parse_pair(key, v)?,
            "stroke_length" => self.stroke_length = parse_auto_pair(key, v)?,
            "thickness" => self.thickness = parse_auto_pair(key, v)?,
            "max_rounds" => self.max_rounds = parse_num(key, v)?,
            "lbp_points" => self.lbp.points = parse_num(key, v)?,
            "lbp_radius" => self.lbp.radius = parse_num(key, v)?,
            "patch" => self.patch = parse_num(key, v)?,
            "lambda_inp" => self.weights.inp = parse_num(key, v)?,
            "lambda_lbp" => self.weights.lbp = parse_num(key, v)?,
            "lambda_ce" => self.weights.ce = parse_num(key, v)?,
            "lambda_pseudo" => self.weights.pseudo = parse_num(key, v)?,
            "lambda_dice" => self.lambda_dice = parse_num(key, v)?,
            "dice_classes" => self.dice_classes = parse_num(key, v)?,
            "threshold" => self.threshold = parse_num(key, v)?,
            "widths" => {
                self.widths = v
                    .split(',')
                    .map(|w| parse_num(key, w))
                    .collect::<Result<Vec<usize>>>()?
            }
            "eval_every" => self.eval_every = parse_num(key, v)?,
            other => return Err(Error::invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seed" => self.seed.to_string(),
            "batch" => self.batch.to_string(),
            "pretrain_steps" => self.pretrain_steps.to_string(),
            "finetune_steps" => self.finetune_steps.to_string(),
            "pseudo_start" => self.pseudo_start.map(|s| s.to_string()).unwrap_or_else(|| "auto".into()),
            "optimizer" => self.optimizer.to_string(),
            "lr" => self.lr.to_string(),
            "momentum" => self.momentum.to_string(),
            "mask" => self.mask.to_string(),
            "mask_ratio" => self.mask_ratio.to_string(),
            "strokes" => format!("{},{}", self.strokes.0, self.strokes.1),
            "segments" => format!("{},{}", self.segments.0, self.segments.1),
            "stroke_length" => fmt_auto_pair(self.stroke_length),
            "thickness" => fmt_auto_pair(self.thickness),
            "max_rounds" => self.max_rounds.to_string(),
            "lbp_points" => self.lbp.points.to_string(),
            "lbp_radius" => self.lbp.radius.to_string(),
            "patch" => self.patch.to_string(),
            "lambda_inp" => self.weights.inp.to_string(),
            "lambda_lbp" => self.weights.lbp.to_string(),
            "lambda_ce" => self.weights.ce.to_string(),
            "lambda_pseudo" => self.weights.pseudo.to_string(),
            "lambda_dice" => self.lambda_dice.to_string(),
            "dice_classes" => self.dice_classes.to_string(),
            "threshold" => self.threshold.to_string(),
            "widths" => self.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
            "eval_every" => self.eval_every.to_string(),
            _ => return None,
        })
    }

    /// `key = value` lines; `#` starts a comment.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            writeln!(out, "{key} = {}", self.get(key).unwrap()).unwrap();
        }
        out
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn network(&self, channels: usize, height: usize, width: usize, categories: usize) -> RefNetConfig {
        let mut net = RefNetConfig::new(channels, height, width, categories, self.lbp.bins(), self.patch);
        net.widths = self.widths.clone();
        net
    }
}

/// First-order optimizer state over `f32` weights with `f64` moments.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    momentum: f64,
    m: RefNet<f64>,
    v: Option<RefNet<f64>>,
    t: i32,
}

impl Optimizer {
    pub fn new(net: &RefNet<f32>, cfg: &TrainConfig) -> Self {
        let adam = cfg.optimizer == OptimizerKind::Adam;
        Self {
            kind: cfg.optimizer,
            lr: cfg.lr,
            momentum: cfg.momentum,
            m: net.zeros_like(),
            v: adam.then(|| net.zeros_like()),
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut RefNet<f32>, grads: &RefNet<f64>) {
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let tensors = net.tensors_mut().into_iter().zip(self.m.tensors_mut()).zip(grads.tensors());
                for ((w, m), g) in tensors {
                    for ((w, m), g) in w.iter_mut().zip(m.iter_mut()).zip(g) {
                        *m = self.momentum * *m + g;
                        *w = (*w as f64 - self.lr * *m) as f32;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.momentum, 0.999, 1e-8);
                let c1 = 1.0 - b1.powi(self.t);
                let c2 = 1.0 - f64::powi(b2, self.t);
                let v = self.v.as_mut().expect("adam state");
                let tensors = net
                    .tensors_mut()
                    .into_iter()
                    .zip(self.m.tensors_mut())
                    .zip(v.tensors_mut())
                    .zip(grads.tensors());
                for (((w, m), v), g) in tensors {
                    for (((w, m), v), g) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        let step = self.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                        *w = (*w as f64 - step) as f32;
                    }
                }
            }
        }
    }
}

/// Losses of one sample (or the batch mean), unweighted components.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub inp: f64,
    pub lbp: f64,
    pub ce: f64,
    pub dice: f64,
    pub pseudo: f64,
    /// Share of unlabeled pixels that received a pseudo-label.
    pub coverage: f64,
    /// Ground-truth pixels whose merged label differs from the ground truth.
    pub gt_overwrites: usize,
}

impl StepLosses {
    fn add_scaled(&mut self, o: &StepLosses, s: f64) {
        self.total += s * o.total;
        self.inp += s * o.inp;
        self.lbp += s * o.lbp;
        self.ce += s * o.ce;
        self.dice += s * o.dice;
        self.pseudo += s * o.pseudo;
        self.coverage += s * o.coverage;
        self.gt_overwrites += o.gt_overwrites;
    }
}

/// A pre-training example: masked input plus the regression targets.
#[derive(Debug, Clone)]
pub struct PretrainItem {
    /// Unmasked image, planar.
    pub target: Vec<f64>,
    /// LBP histograms of the unmasked image, `[cell][bin]`.
    pub texture: Vec<f64>,
    pub channels: usize,
}

impl PretrainItem {
    pub fn new(sample: &Sample, cfg: &TrainConfig) -> Result<Self> {
        let img = &sample.image;
        let hist = texture_target(img, &cfg.lbp, cfg.patch)?;
        Ok(Self {
            target: standardize(img).iter().map(|&v| v as f64).collect(),
            texture: hist.data().iter().map(|&v| v as f64).collect(),
            channels: img.channels(),
        })
    }

    /// `x ⊙ (1 − M)`, planar.
    pub fn masked_input<T: Scalar>(&self, mask: &BinaryMask) -> Vec<T> {
        let plane = mask.values().len();
        self.target
            .iter()
            .enumerate()
            .map(|(k, &v)| if mask.values()[k % plane] != 0 { T::zero() } else { T::of(v) })
            .collect()
    }
}

fn widen<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.wide()).collect()
}

/// Pre-training loss of one sample; adds `scale ·` its parameter gradient
/// into `grads`. An empty patch mask skips the texture term.
pub fn pretrain_sample<T: Scalar>(
    net: &RefNet<T>,
    item: &PretrainItem,
    mask: &BinaryMask,
    pmask: &PatchMask,
    weights: &LossWeights,
    scale: f64,
    grads: &mut RefNet<f64>,
) -> Result<StepLosses> {
    let use_texture = weights.lbp > 0.0 && pmask.count() > 0;
    let heads = Heads {
        inpaint: weights.inp > 0.0,
        texture: use_texture,
        ..Heads::default()
    };
    let pass = net.forward(&item.masked_input::<T>(mask), heads)?;
    let mut out = StepLosses::default();
    let mut og = OutputGrads::default();

    let inp = match &pass.inpaint {
        Some(pred) => loss::loss_inp(&widen(pred), &item.target, item.channels, mask)?,
        None => LossValue::zero(0),
    };
    let lbp = match &pass.texture {
        Some(pred) => loss::loss_lbp(&widen(pred), &item.texture, net.config.bins, pmask)?,
        None => LossValue::zero(0),
    };
    let total = loss::loss_pretrain(&inp, &lbp, weights);
    out.inp = inp.value;
    out.lbp = lbp.value;
    out.total = total.value;
    if heads.inpaint {
        og.inpaint = Some(total.grads[0].iter().map(|g| g * scale).collect());
    }
    if heads.texture {
        og.texture = Some(total.grads[1].iter().map(|g| g * scale).collect());
    }
    net.backward(&pass, &og, grads)?;
    Ok(out)
}

/// Per-pixel argmax of planar logits.
pub fn argmax_labels<T: Scalar>(logits: &[T], categories: usize, height: usize, width: usize) -> Result<SparseLabelMap> {
    let plane = height * width;
    let labels = (0..plane)
        .map(|i| {
            let mut best = 0;
            for k in 1..categories {
                if logits[k * plane + i] > logits[best * plane + i] {
                    best = k;
                }
            }
            best as i32
        })
        .collect();
    SparseLabelMap::new(height, width, categories, labels)
}

/// Options of one fine-tuning step.
#[derive(Debug, Clone, Copy)]
pub struct FinetuneStep {
    pub weights: LossWeights,
    pub lambda_dice: f64,
    pub two_class_dice: bool,
    /// `Some` once pseudo-labeling is active.
    pub gate: Option<PseudoGate>,
}

/// Fine-tuning loss of one sample; adds `scale ·` its gradient into `grads`.
///
/// The classifier sees `λ_ce·L_ce` (plus `λ_pseudo·L_pseudo` when a gate is
/// given); the discriminator sees `λ_dice·L_dice` against the labeledness
/// target. Samples without labels contribute only the dice term.
pub fn finetune_sample<T: Scalar>(
    net: &RefNet<T>,
    x: &[T],
    labels: &SparseLabelMap,
    step: &FinetuneStep,
    scale: f64,
    grads: &mut RefNet<f64>,
) -> Result<StepLosses> {
    let cfg = &net.config;
    let pass = net.forward(x, Heads::FINETUNE)?;
    let logits = widen(pass.logits.as_ref().unwrap());
    let certainty = widen(pass.certainty.as_ref().unwrap());
    let mut out = StepLosses::default();

    let ce = if labels.labeled_count() > 0 {
        loss::masked_cross_entropy(&logits, labels)?
    } else {
        LossValue::zero(logits.len())
    };
    let objective = match step.gate.filter(|_| step.weights.pseudo > 0.0) {
        Some(gate) => {
            let pred = argmax_labels(&logits, cfg.categories, cfg.height, cfg.width)?;
            let cmap = CertaintyMap::new(cfg.height, cfg.width, certainty.clone())?;
            let selected = pseudo::select_gated(&pred, &cmap, &gate)?;
            let merged = pseudo::merge_labels(&selected, labels)?;
            out.gt_overwrites = labels
                .labels()
                .iter()
                .zip(merged.labels())
                .filter(|(&g, &m)| g != UNLABELED && g != m)
                .count();
            out.coverage = pseudo::pseudo_coverage(&merged, labels)?;
            let pl = loss::loss_pseudo(&logits, &merged)?;
            out.pseudo = pl.value;
            let semi = loss::loss_semi(&ce, &pl, &step.weights);
            let g = semi.grads[0].iter().zip(&semi.grads[1]).map(|(a, b)| a + b).collect();
            LossValue {
                value: semi.value,
                grads: vec![g],
            }
        }
        None => loss::loss_supervised(&ce, &step.weights),
    };
    let q = pseudo::labeledness_target(labels);
    let dice = if step.two_class_dice {
        loss::dice_loss_two_class(&certainty, &q)?
    } else {
        loss::dice_loss(&certainty, &q)?
    };
    out.ce = ce.value;
    out.dice = dice.value;
    out.total = objective.value + step.lambda_dice * dice.value;

    let og = OutputGrads {
        logits: Some(objective.grad().iter().map(|g| g * scale).collect()),
        certainty: Some(dice.grad().iter().map(|g| g * step.lambda_dice * scale).collect()),
        ..Default::default()
    };
    net.backward(&pass, &og, grads)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Finetune,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub phase: Phase,
    pub step: usize,
    pub losses: StepLosses,
    pub pseudo_active: bool,
    /// Validation mIoU when evaluated at this step.
    pub val_miou: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
}

impl TrainLog {
    pub fn totals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.losses.total).collect()
    }

    /// Total ground-truth overwrites across all steps.
    pub fn gt_overwrites(&self) -> usize {
        self.records.iter().map(|r| r.losses.gt_overwrites).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,step,total,inp,lbp,ce,dice,pseudo,coverage,pseudo_active,gt_overwrites,val_miou,seconds\n");
        for r in &self.records {
            let l = &r.losses;
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{:.3}",
                r.phase.name(),
                r.step,
                l.total,
                l.inp,
                l.lbp,
                l.ce,
                l.dice,
                l.pseudo,
                l.coverage,
                r.pseudo_active as u8,
                l.gt_overwrites,
                r.val_miou.map(|v| format!("{v:.6}")).unwrap_or_default(),
                r.seconds
            )
            .unwrap();
        }
        out
    }
}

fn phase_rng(seed: u64, phase: Phase) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(match phase {
        Phase::Pretrain => 1,
        Phase::Finetune => 2,
    });
    rng
}

fn check_finite(step: usize, losses: &StepLosses, grads: &RefNet<f64>) -> Result<()> {
    if !losses.total.is_finite() {
        return Err(Error::Divergence {
            step,
            what: "loss".into(),
        });
    }
    if !grads.is_finite() {
        return Err(Error::Divergence {
            step,
            what: "gradient".into(),
        });
    }
    Ok(())
}

fn dims(samples: &[Sample]) -> Result<(usize, usize, usize)> {
    let first = samples.first().ok_or_else(|| Error::invalid("no training samples"))?;
    let d = (first.image.channels(), first.image.height(), first.image.width());
    if samples
        .iter()
        .any(|s| (s.image.channels(), s.image.height(), s.image.width()) != d)
    {
        return Err(Error::invalid("training images differ in size"));
    }
    Ok(d)
}

/// Masked inpainting + texture pre-training on unlabeled images.
pub fn pretrain(cfg: &TrainConfig, images: &[Sample], categories: usize) -> Result<(RefNet<f32>, TrainLog)> {
    cfg.validate()?;
    let (c, h, w) = dims(images)?;
    let mut net = RefNet::<f32>::init(cfg.network(c, h, w, categories), cfg.seed)?;
    let items = images
        .iter()
        .map(|s| PretrainItem::new(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let strategy = cfg.mask_strategy(h, w);
    let mut opt = Optimizer::new(&net, cfg);
    let mut rng = phase_rng(cfg.seed, Phase::Pretrain);
    let mut log = TrainLog::default();
    let start = Instant::now();
    let scale = 1.0 / cfg.batch as f64;
    for step in 0..cfg.pretrain_steps {
        let mut grads = net.zeros_like();
        let mut losses = StepLosses::default();
        for _ in 0..cfg.batch {
            let item = &items[rng.gen_range(0..items.len())];
            let mask = strategy.generate(h, w, rng.next_u64())?;
            let pmask = to_patch_mask(&mask, cfg.patch)?;
            let l = pretrain_sample(&net, item, &mask, &pmask, &cfg.weights, scale, &mut grads)?;
            losses.add_scaled(&l, scale);
        }
        check_finite(step, &losses, &grads)?;
        opt.step(&mut net, &grads);
        log.records.push(StepRecord {
            phase: Phase::Pretrain,
            step,
            losses,
            pseudo_active: false,
            val_miou: None,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((net, log))
}

fn planar_input(sample: &Sample) -> Vec<f32> {
    standardize(&sample.image)
}

/// Planar channels shifted to zero mean and scaled to unit variance, per
/// image. Flat channels are only centred.
pub fn standardize(img: &ImageTensor) -> Vec<f32> {
    let mut data = img.to_planar();
    let plane = img.height() * img.width();
    for ch in data.chunks_mut(plane) {
        let n = ch.len() as f64;
        let mean = ch.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = ch.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let inv = if var > 1e-12 { 1.0 / var.sqrt() } else { 1.0 };
        ch.iter_mut().for_each(|v| *v = ((*v as f64 - mean) * inv) as f32);
    }
    data
}

/// Supervised (and, from `pseudo_start`, pseudo-labeled) fine-tuning.
/// `init` supplies a pre-trained encoder; heads start from the seeded
/// initialization either way.
pub fn finetune(
    cfg: &TrainConfig,
    train: &[Sample],
    val: &[Sample],
    categories: usize,
    init: Option<&RefNet<f32>>,
) -> Result<(RefNet<f32>, TrainLog)> {
    cfg.validate()?;
    let (c, h, w) = dims(train)?;
    let mut net = RefNet::<f32>::init(cfg.network(c, h, w, categories), cfg.seed)?;
    if let Some(pre) = init {
        net.load_encoder(pre)?;
    }
    let inputs: Vec<Vec<f32>> = train.iter().map(planar_input).collect();
    let gate = cfg.gate()?;
    let pseudo_start = cfg.pseudo_start_step();
    let mut opt = Optimizer::new(&net, cfg);
    let mut rng = phase_rng(cfg.seed, Phase::Finetune);
    let mut log = TrainLog::default();
    let start = Instant::now();
    let scale = 1.0 / cfg.batch as f64;
    for step in 0..cfg.finetune_steps {
        let active = step >= pseudo_start && cfg.weights.pseudo > 0.0;
        let options = FinetuneStep {
            weights: cfg.weights,
            lambda_dice: cfg.lambda_dice,
            two_class_dice: cfg.dice_classes == 2,
            gate: active.then_some(gate),
        };
        let mut grads = net.zeros_like();
        let mut losses = StepLosses::default();
        for _ in 0..cfg.batch {
            let i = rng.gen_range(0..train.len());
            let l = finetune_sample(&net, &inputs[i], &train[i].labels, &options, scale, &mut grads)?;
            losses.add_scaled(&l, scale);
        }
        check_finite(step, &losses, &grads)?;
        if losses.gt_overwrites > 0 {
            return Err(Error::invalid(format!(
                "step {step}: pseudo-labels overwrote {} ground-truth pixels",
                losses.gt_overwrites
            )));
        }
        opt.step(&mut net, &grads);
        let val_miou = if cfg.eval_every > 0 && !val.is_empty() && (step + 1) % cfg.eval_every == 0 {
            evaluate(&net, val)?.miou().ok()
        } else {
            None
        };
        log.records.push(StepRecord {
            phase: Phase::Finetune,
            step,
            losses,
            pseudo_active: active,
            val_miou,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((net, log))
}

/// Category prediction for one image.
pub fn predict(net: &RefNet<f32>, sample: &Sample) -> Result<SparseLabelMap> {
    let cfg = &net.config;
    let pass = net.forward(&planar_input(sample), Heads::CLASSIFY)?;
    argmax_labels(pass.logits.as_ref().unwrap(), cfg.categories, cfg.height, cfg.width)
}

/// Confusion matrix accumulated over every labeled pixel of `samples`.
pub fn evaluate(net: &RefNet<f32>, samples: &[Sample]) -> Result<ConfusionMatrix> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluation split is empty"));
    }
    let mut cm = ConfusionMatrix::new(net.config.categories);
    for s in samples {
        cm.accumulate(&predict(net, s)?, &s.labels)?;
    }
    Ok(cm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.seed = 11;
        cfg.thickness = Some((2.0, 5.5));
        cfg.widths = vec![4, 8];
        cfg.optimizer = OptimizerKind::Adam;
        cfg.pseudo_start = Some(7);
        let back = TrainConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_errors() {
        assert!(TrainConfig::parse("nope = 1").is_err());
        assert!(TrainConfig::parse("batch = x").is_err());
        assert!(TrainConfig::parse("batch 3").is_err());
        let cfg = TrainConfig::parse("finetune_steps = 10\npseudo_start = 10").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig::parse("threshold = 1.0").unwrap();
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::parse("# comment\n\nseed = 3 # trailing").unwrap().seed == 3);
    }

    #[test]
    fn pseudo_start_defaults_to_sixty_percent() {
        let cfg = TrainConfig {
            finetune_steps: 50_000,
            ..Default::default()
        };
        assert_eq!(cfg.pseudo_start_step(), 30_000);
    }

    #[test]
    fn zero_threshold_is_ungated() {
        let cfg = TrainConfig {
            threshold: 0.0,
            ..Default::default()
        };
        assert_eq!(cfg.gate().unwrap(), PseudoGate::Ungated);
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        let logits = [1.0f64, 0.0, 1.0, 2.0];
        let m = argmax_labels(&logits, 2, 1, 2).unwrap();
        assert_eq!(m.labels(), &[0, 1]);
    }
}
