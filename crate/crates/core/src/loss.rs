//! Loss functions with analytic gradients, evaluated in `f64`.
//!
//! Dense per-pixel inputs use planar `CHW` layout: channel `c` of pixel `i`
//! sits at `c * plane + i`. Histogram inputs use the `[cell][bin]` layout of
//! [`crate::lbp::LbpHistogramMap`].

use crate::error::{Error, Result};
use crate::imaging::{SparseLabelMap, UNLABELED};
use crate::mask::{BinaryMask, PatchMask};

/// Smoothing term of the dice ratio.
pub const DICE_EPS: f64 = 1e-6;

/// A loss value plus its gradient with respect to each differentiable input.
///
/// Composite losses keep one gradient per component, in argument order, so
/// callers can route each back to the tensor it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
}

impl LossValue {
    fn single(value: f64, grad: Vec<f64>) -> Self {
        Self {
            value,
            grads: vec![grad],
        }
    }

    pub fn zero(len: usize) -> Self {
        Self::single(0.0, vec![0.0; len])
    }

    pub fn grad(&self) -> &[f64] {
        &self.grads[0]
    }

    fn scaled(&self, w: f64) -> Self {
        Self {
            value: w * self.value,
            grads: self
                .grads
                .iter()
                .map(|g| g.iter().map(|v| w * v).collect())
                .collect(),
        }
    }

    fn combine(a: &LossValue, wa: f64, b: &LossValue, wb: f64) -> Self {
        let mut out = a.scaled(wa);
        let b = b.scaled(wb);
        out.value += b.value;
        out.grads.extend(b.grads);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub inp: f64,
    pub lbp: f64,
    pub ce: f64,
    pub pseudo: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            inp: 0.5,
            lbp: 0.5,
            ce: 1.0,
            pseudo: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_inp", self.inp),
            ("lambda_lbp", self.lbp),
            ("lambda_ce", self.ce),
            ("lambda_pseudo", self.pseudo),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Mean squared error over masked pixels (all channels).
pub fn loss_inp(pred: &[f64], target: &[f64], channels: usize, mask: &BinaryMask) -> Result<LossValue> {
    let plane = mask.height() * mask.width();
    if pred.len() != target.len() || pred.len() != plane * channels {
        return Err(Error::invalid(format!(
            "inpainting shapes differ: pred {}, target {}, mask {plane}x{channels}",
            pred.len(),
            target.len()
        )));
    }
    let masked = mask.count();
    if masked == 0 {
        return Err(Error::EmptyRegion("inpainting mask has no masked pixel"));
    }
    let n = (masked * channels) as f64;
    let mut grad = vec![0.0; pred.len()];
    let mut sum = 0.0;
    for c in 0..channels {
        for (i, &m) in mask.values().iter().enumerate() {
            if m != 0 {
                let k = c * plane + i;
                let d = pred[k] - target[k];
                sum += d * d;
                grad[k] = 2.0 * d / n;
            }
        }
    }
    Ok(LossValue::single(sum / n, grad))
}

/// Mean squared error over the histogram vectors of masked patches.
pub fn loss_lbp(pred: &[f64], target: &[f64], bins: usize, pmask: &PatchMask) -> Result<LossValue> {
    let cells = pmask.grid_h() * pmask.grid_w();
    if pred.len() != target.len() || pred.len() != cells * bins {
        return Err(Error::invalid(format!(
            "histogram shapes differ: pred {}, target {}, grid {cells}x{bins}",
            pred.len(),
            target.len()
        )));
    }
    let masked = pmask.count();
    if masked == 0 {
        return Err(Error::EmptyRegion("patch mask has no masked patch"));
    }
    let n = (masked * bins) as f64;
    let mut grad = vec![0.0; pred.len()];
    let mut sum = 0.0;
    for (cell, &m) in pmask.values().iter().enumerate() {
        if m == 0 {
            continue;
        }
        for k in cell * bins..(cell + 1) * bins {
            let d = pred[k] - target[k];
            sum += d * d;
            grad[k] = 2.0 * d / n;
        }
    }
    Ok(LossValue::single(sum / n, grad))
}

/// `λ_inp·L_inp + λ_lbp·L_lbp`; gradients are `[inp, lbp]`.
pub fn loss_pretrain(inp: &LossValue, lbp: &LossValue, w: &LossWeights) -> LossValue {
    LossValue::combine(inp, w.inp, lbp, w.lbp)
}

fn check_logits(logits: &[f64], labels: &SparseLabelMap) -> Result<usize> {
    let plane = labels.len();
    let c = labels.num_categories();
    if logits.len() != plane * c {
        return Err(Error::invalid(format!(
            "logits length {} != {} categories x {plane} pixels",
            logits.len(),
            c
        )));
    }
    Ok(plane)
}

/// Sum of per-pixel negative log-likelihoods and the unnormalized gradient.
fn nll_sum(logits: &[f64], labels: &SparseLabelMap, plane: usize) -> (f64, Vec<f64>, usize) {
    let c = labels.num_categories();
    let mut grad = vec![0.0; logits.len()];
    let mut sum = 0.0;
    let mut count = 0;
    let mut probs = vec![0.0; c];
    for (i, &y) in labels.labels().iter().enumerate() {
        if y == UNLABELED {
            continue;
        }
        let max = (0..c).map(|k| logits[k * plane + i]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (k, p) in probs.iter_mut().enumerate() {
            *p = (logits[k * plane + i] - max).exp();
            z += *p;
        }
        sum += z.ln() + max - logits[y as usize * plane + i];
        for (k, p) in probs.iter().enumerate() {
            grad[k * plane + i] = p / z - if k == y as usize { 1.0 } else { 0.0 };
        }
        count += 1;
    }
    (sum, grad, count)
}

/// Mean cross-entropy over labeled pixels; unlabeled pixels get no gradient.
pub fn masked_cross_entropy(logits: &[f64], labels: &SparseLabelMap) -> Result<LossValue> {
    let plane = check_logits(logits, labels)?;
    let (sum, mut grad, count) = nll_sum(logits, labels, plane);
    if count == 0 {
        return Err(Error::EmptyRegion("label map has no labeled pixel"));
    }
    let n = count as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok(LossValue::single(sum / n, grad))
}

/// Cross-entropy against merged pseudo-labels. An empty target set yields
/// zero loss and zero gradient rather than an error.
pub fn loss_pseudo(logits: &[f64], merged: &SparseLabelMap) -> Result<LossValue> {
    let plane = check_logits(logits, merged)?;
    let (sum, mut grad, count) = nll_sum(logits, merged, plane);
    if count == 0 {
        return Ok(LossValue::zero(logits.len()));
    }
    let n = count as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok(LossValue::single(sum / n, grad))
}

/// `1 − (2Σpq + ε) / (Σp + Σq + ε)`.
pub fn dice_loss(p: &[f64], q: &[f64]) -> Result<LossValue> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!(
            "dice inputs differ in length: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let inter: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    let sp: f64 = p.iter().sum();
    let sq: f64 = q.iter().sum();
    let num = 2.0 * inter + DICE_EPS;
    let den = sp + sq + DICE_EPS;
    let grad = q.iter().map(|&qi| -(2.0 * qi * den - num) / (den * den)).collect();
    Ok(LossValue::single(1.0 - num / den, grad))
}

/// Mean of the dice losses of the labeled class (`p`, `q`) and the
/// unlabeled class (`1 − p`, `1 − q`).
pub fn dice_loss_two_class(p: &[f64], q: &[f64]) -> Result<LossValue> {
    let pos = dice_loss(p, q)?;
    let inv = |v: &[f64]| v.iter().map(|x| 1.0 - x).collect::<Vec<_>>();
    let neg = dice_loss(&inv(p), &inv(q))?;
    let grad = pos.grad().iter().zip(neg.grad()).map(|(a, b)| 0.5 * (a - b)).collect();
    Ok(LossValue::single(0.5 * (pos.value + neg.value), grad))
}

/// `λ_ce·L_ce`.
pub fn loss_supervised(ce: &LossValue, w: &LossWeights) -> LossValue {
    ce.scaled(w.ce)
}

/// `λ_ce·L_ce + λ_pseudo·L_pseudo`; gradients are `[ce, pseudo]`.
pub fn loss_semi(ce: &LossValue, pseudo: &LossValue, w: &LossWeights) -> LossValue {
    LossValue::combine(ce, w.ce, pseudo, w.pseudo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn inp_examples() {
        let mask = BinaryMask::new(1, 2, vec![1, 0]).unwrap();
        let l = loss_inp(&[1.0, 5.0], &[1.0, 0.0], 1, &mask).unwrap();
        assert_eq!(l.value, 0.0);
        assert_eq!(l.grad(), &[0.0, 0.0]);
        let l = loss_inp(&[4.0, 0.0], &[1.0, 0.0], 1, &mask).unwrap();
        assert_eq!(l.value, 9.0);
        let empty = BinaryMask::zeros(1, 2);
        assert!(matches!(loss_inp(&[0.0; 2], &[0.0; 2], 1, &empty), Err(Error::EmptyRegion(_))));
    }

    #[test]
    fn lbp_one_hot_mismatch() {
        let bins = 5;
        let pm = PatchMask::new(1, 2, vec![1, 0]).unwrap();
        let mut pred = vec![0.0; 10];
        let mut target = vec![0.0; 10];
        pred[1] = 1.0;
        target[3] = 1.0;
        // unmasked cell differs arbitrarily
        pred[7] = 0.3;
        let l = loss_lbp(&pred, &target, bins, &pm).unwrap();
        approx(l.value, 2.0 / bins as f64, 1e-15);
        assert!(l.grad()[5..].iter().all(|&g| g == 0.0));
        let none = PatchMask::new(1, 2, vec![0, 0]).unwrap();
        assert!(loss_lbp(&pred, &target, bins, &none).is_err());
    }

    #[test]
    fn pretrain_combination() {
        let a = LossValue::single(0.4, vec![1.0]);
        let b = LossValue::single(0.2, vec![2.0, 4.0]);
        let w = LossWeights::default();
        let l = loss_pretrain(&a, &b, &w);
        approx(l.value, 0.3, 1e-15);
        assert_eq!(l.grads, vec![vec![0.5], vec![1.0, 2.0]]);
        let no_lbp = LossWeights { lbp: 0.0, ..w };
        assert_eq!(loss_pretrain(&a, &b, &no_lbp).value, 0.5 * 0.4);
        let z = LossValue::zero(1);
        assert_eq!(loss_pretrain(&z, &z, &w).value, 0.0);
    }

    #[test]
    fn cross_entropy_examples() {
        let y = SparseLabelMap::new(1, 1, 2, vec![0]).unwrap();
        approx(masked_cross_entropy(&[0.0, 0.0], &y).unwrap().value, std::f64::consts::LN_2, 1e-15);

        // pixel 0 confident and labeled, pixel 1 unlabeled
        let y = SparseLabelMap::new(1, 2, 2, vec![1, -1]).unwrap();
        let logits = [-40.0, 3.0, 40.0, -2.0];
        let l = masked_cross_entropy(&logits, &y).unwrap();
        assert!(l.value < 1e-15);
        let flipped = [-40.0, -2.0, 40.0, 3.0];
        assert_eq!(masked_cross_entropy(&flipped, &y).unwrap().value, l.value);
        assert_eq!(l.grad()[1], 0.0);
        assert_eq!(l.grad()[3], 0.0);

        let none = SparseLabelMap::unlabeled(1, 2, 2).unwrap();
        assert!(masked_cross_entropy(&logits, &none).is_err());
    }

    #[test]
    fn dice_examples() {
        let p = [1.0, 0.0, 1.0];
        assert!(dice_loss(&p, &p).unwrap().value < 1e-9);
        let half = vec![0.5; 10];
        let ones = vec![1.0; 10];
        approx(dice_loss(&half, &ones).unwrap().value, 1.0 / 3.0, 1e-7);
        let zeros = vec![0.0; 4];
        let q = [0.0, 1.0, 1.0, 0.0];
        assert!(dice_loss(&zeros, &q).unwrap().value > 1.0 - 1e-6);
        assert_eq!(dice_loss(&zeros, &zeros).unwrap().value, 0.0);
    }

    #[test]
    fn two_class_dice() {
        let q = [1.0, 0.0, 1.0, 0.0];
        assert!(dice_loss_two_class(&q, &q).unwrap().value < 1e-9);
        // all-ones scores perfectly on the labeled class but not the other
        let l = dice_loss_two_class(&[1.0; 4], &q).unwrap();
        approx(l.value, 0.5 * (1.0 / 3.0 + 1.0), 1e-6);
        let p = [0.2, 0.7, 0.4, 0.9];
        let g = dice_loss_two_class(&p, &q).unwrap();
        for i in 0..4 {
            let mut up = p;
            let mut down = p;
            up[i] += 1e-6;
            down[i] -= 1e-6;
            let fd = (dice_loss_two_class(&up, &q).unwrap().value - dice_loss_two_class(&down, &q).unwrap().value) / 2e-6;
            approx(g.grad()[i], fd, 1e-8);
        }
    }

    #[test]
    fn pseudo_examples() {
        let y = SparseLabelMap::new(1, 2, 2, vec![0, -1]).unwrap();
        let logits = [0.3, -1.0, 0.1, 2.0];
        assert_eq!(
            loss_pseudo(&logits, &y).unwrap(),
            masked_cross_entropy(&logits, &y).unwrap()
        );
        let none = SparseLabelMap::unlabeled(1, 2, 2).unwrap();
        let l = loss_pseudo(&logits, &none).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.grad().iter().all(|&g| g == 0.0));
        let one = SparseLabelMap::new(1, 1, 2, vec![1]).unwrap();
        approx(loss_pseudo(&[0.0, 0.0], &one).unwrap().value, std::f64::consts::LN_2, 1e-15);
    }

    #[test]
    fn supervised_and_semi() {
        let ce = LossValue::single(0.7, vec![1.0]);
        let ps = LossValue::single(0.3, vec![1.0]);
        let w = LossWeights::default();
        approx(loss_supervised(&ce, &w).value, 0.7, 1e-15);
        assert_eq!(loss_supervised(&ce, &LossWeights { ce: 0.0, ..w }).value, 0.0);
        let half = LossValue::single(0.5, vec![1.0]);
        assert_eq!(loss_supervised(&half, &LossWeights { ce: 2.0, ..w }).value, 1.0);
        approx(loss_semi(&ce, &ps, &w).value, 1.0, 1e-15);
        let sup_only = LossWeights { pseudo: 0.0, ..w };
        assert_eq!(loss_semi(&ce, &ps, &sup_only).value, loss_supervised(&ce, &sup_only).value);
        let off = LossWeights { ce: 0.0, pseudo: 0.0, ..w };
        assert_eq!(loss_semi(&ce, &ps, &off).value, 0.0);
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { lbp: -0.1, ..Default::default() }.validate().is_err());
    }
}
