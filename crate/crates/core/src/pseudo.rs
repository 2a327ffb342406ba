//! Labeledness targets for the discriminator and confidence-gated fusion of
//! model predictions with sparse ground truth.

use crate::error::{Error, Result};
use crate::imaging::{SparseLabelMap, UNLABELED};

/// Per-pixel probability that a pixel is label-like (low task uncertainty).
#[derive(Debug, Clone, PartialEq)]
pub struct CertaintyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl CertaintyMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::invalid("certainty map length does not match shape"));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("certainty {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// `q = 1` where the ground truth is labeled.
pub fn labeledness_target(y: &SparseLabelMap) -> Vec<f64> {
    y.labels()
        .iter()
        .map(|&l| if l == UNLABELED { 0.0 } else { 1.0 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPolicy {
    t: f64,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self { t: 0.9 }
    }
}

impl ThresholdPolicy {
    pub fn new(t: f64) -> Result<Self> {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::invalid(format!("threshold {t} outside (0, 1)")));
        }
        Ok(Self { t })
    }

    pub fn threshold(&self) -> f64 {
        self.t
    }
}

/// How predictions are admitted as pseudo-labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PseudoGate {
    /// Keep predictions whose certainty exceeds the threshold.
    Threshold(ThresholdPolicy),
    /// Keep every prediction regardless of certainty.
    Ungated,
}

impl PseudoGate {
    fn admits(&self, p: f64) -> bool {
        match self {
            PseudoGate::Threshold(policy) => p > policy.t,
            PseudoGate::Ungated => true,
        }
    }
}

fn check_dims(pred: &SparseLabelMap, p: &CertaintyMap) -> Result<()> {
    if pred.height() != p.height || pred.width() != p.width {
        return Err(Error::invalid(format!(
            "certainty map {}x{} does not match predictions {}x{}",
            p.height,
            p.width,
            pred.height(),
            pred.width()
        )));
    }
    Ok(())
}

/// Keeps `pred` where `p > t` (strict), `UNLABELED` elsewhere.
pub fn select_confident(pred: &SparseLabelMap, p: &CertaintyMap, policy: &ThresholdPolicy) -> Result<SparseLabelMap> {
    select_gated(pred, p, &PseudoGate::Threshold(*policy))
}

pub fn select_gated(pred: &SparseLabelMap, p: &CertaintyMap, gate: &PseudoGate) -> Result<SparseLabelMap> {
    check_dims(pred, p)?;
    let labels = pred
        .labels()
        .iter()
        .zip(&p.values)
        .map(|(&l, &c)| if gate.admits(c) { l } else { UNLABELED })
        .collect();
    SparseLabelMap::new(pred.height(), pred.width(), pred.num_categories(), labels)
}

/// Ground truth wins wherever it exists; otherwise the selected prediction.
pub fn merge_labels(selected: &SparseLabelMap, y: &SparseLabelMap) -> Result<SparseLabelMap> {
    selected.check_shape(y)?;
    let labels = y
        .labels()
        .iter()
        .zip(selected.labels())
        .map(|(&gt, &s)| if gt != UNLABELED { gt } else { s })
        .collect();
    SparseLabelMap::new(y.height(), y.width(), y.num_categories(), labels)
}

/// Fraction of originally unlabeled pixels that received a pseudo-label.
/// Zero when `y` has no unlabeled pixel.
pub fn pseudo_coverage(merged: &SparseLabelMap, y: &SparseLabelMap) -> Result<f64> {
    merged.check_shape(y)?;
    let (mut open, mut filled) = (0usize, 0usize);
    for (&m, &gt) in merged.labels().iter().zip(y.labels()) {
        if gt == UNLABELED {
            open += 1;
            if m != UNLABELED {
                filled += 1;
            }
        }
    }
    Ok(if open == 0 {
        0.0
    } else {
        filled as f64 / open as f64
    })
}
