//! Confusion-matrix based segmentation metrics over labeled pixels.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::imaging::{CategoryTable, SparseLabelMap, UNLABELED};

/// `counts[gt * C + pred]`, accumulated over labeled pixels only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    categories: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(categories: usize) -> Self {
        Self {
            categories,
            counts: vec![0; categories * categories],
        }
    }

    pub fn from_counts(categories: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != categories * categories {
            return Err(Error::invalid("confusion counts must be C x C"));
        }
        Ok(Self { categories, counts })
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.categories + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Ground-truth pixel count per category.
    pub fn support(&self, gt: usize) -> u64 {
        self.counts[gt * self.categories..(gt + 1) * self.categories].iter().sum()
    }

    fn predicted(&self, pred: usize) -> u64 {
        (0..self.categories).map(|g| self.get(g, pred)).sum()
    }

    pub fn accumulate(&mut self, pred: &SparseLabelMap, gt: &SparseLabelMap) -> Result<()> {
        if !pred.same_shape(gt) {
            return Err(Error::invalid("prediction and ground truth differ in shape"));
        }
        let c = self.categories as i32;
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if g == UNLABELED {
                continue;
            }
            if g >= c || p < 0 || p >= c {
                return Err(Error::invalid(format!(
                    "category out of range: gt {g}, pred {p}, C = {c}"
                )));
            }
            self.counts[(g * c + p) as usize] += 1;
        }
        Ok(())
    }

    /// Exact integer merge; associative and commutative.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.categories != self.categories {
            return Err(Error::invalid("cannot merge confusion matrices of different size"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Recall per category, `None` where the category has no ground truth.
    pub fn recalls(&self) -> Vec<Option<f64>> {
        (0..self.categories)
            .map(|k| {
                let s = self.support(k);
                (s > 0).then(|| self.get(k, k) as f64 / s as f64)
            })
            .collect()
    }

    /// IoU per category, `None` where the category has no ground truth.
    pub fn ious(&self) -> Vec<Option<f64>> {
        (0..self.categories)
            .map(|k| {
                let s = self.support(k);
                let tp = self.get(k, k);
                (s > 0).then(|| tp as f64 / (s + self.predicted(k) - tp) as f64)
            })
            .collect()
    }

    fn require_nonempty(&self) -> Result<u64> {
        match self.total() {
            0 => Err(Error::UndefinedMetric("confusion matrix is empty")),
            t => Ok(t),
        }
    }

    pub fn acc(&self) -> Result<f64> {
        let total = self.require_nonempty()?;
        let trace: u64 = (0..self.categories).map(|k| self.get(k, k)).sum();
        Ok(trace as f64 / total as f64)
    }

    pub fn macc(&self) -> Result<f64> {
        self.require_nonempty()?;
        Ok(mean_present(&self.recalls()))
    }

    pub fn miou(&self) -> Result<f64> {
        self.require_nonempty()?;
        Ok(mean_present(&self.ious()))
    }

    pub fn fwiou(&self) -> Result<f64> {
        let total = self.require_nonempty()? as f64;
        Ok(self
            .ious()
            .iter()
            .enumerate()
            .filter_map(|(k, iou)| iou.map(|v| self.support(k) as f64 / total * v))
            .sum())
    }

    pub fn summary(&self) -> Result<MetricSummary> {
        Ok(MetricSummary {
            acc: self.acc()?,
            macc: self.macc()?,
            miou: self.miou()?,
            fwiou: self.fwiou()?,
        })
    }

    /// Per-category rows followed by the summary rows.
    pub fn to_csv(&self, table: &CategoryTable) -> Result<String> {
        let s = self.summary()?;
        let mut out = String::from("category,pixels,recall,iou\n");
        let recalls = self.recalls();
        let ious = self.ious();
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for k in 0..self.categories {
            let name = table.name(k).map(str::to_string).unwrap_or_else(|| k.to_string());
            writeln!(out, "{name},{},{},{}", self.support(k), fmt(recalls[k]), fmt(ious[k])).unwrap();
        }
        for (name, v) in [("ACC", s.acc), ("MACC", s.macc), ("mIoU", s.miou), ("FWIoU", s.fwiou)] {
            writeln!(out, "{name},,{v:.6},").unwrap();
        }
        Ok(out)
    }
}

fn mean_present(values: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    present.iter().sum::<f64>() / present.len() as f64
}

pub fn confusion(pred: &SparseLabelMap, gt: &SparseLabelMap, categories: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(categories);
    cm.accumulate(pred, gt)?;
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub acc: f64,
    pub macc: f64,
    pub miou: f64,
    pub fwiou: f64,
}
