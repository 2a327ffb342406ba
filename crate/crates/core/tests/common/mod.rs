//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use terraseg::imaging::SparseLabelMap;
use terraseg::mask::{rect_mask, to_patch_mask, BinaryMask, PatchMask};
use terraseg::nn::ops::Scalar;
use terraseg::nn::refnet::{RefNet, RefNetConfig};
use terraseg::train::PretrainItem;

pub fn tiny() -> RefNetConfig {
    let mut c = RefNetConfig::new(3, 16, 16, 3, 6, 8);
    c.widths = vec![3, 4, 5];
    c.inpaint_hidden = 3;
    c.texture_hidden = 4;
    c.disc_hidden = 2;
    c
}

pub fn random_labels(rng: &mut ChaCha8Rng, categories: usize) -> SparseLabelMap {
    let labels = (0..256)
        .map(|_| if rng.gen_bool(0.4) { -1 } else { rng.gen_range(0..categories as i32) })
        .collect();
    SparseLabelMap::new(16, 16, categories, labels).unwrap()
}

/// Largest norm-wise relative error over all tensors.
pub fn check<T: Scalar>(net: &RefNet<T>, loss: impl Fn(&RefNet<T>, &mut RefNet<f64>) -> f64, eps: f64) -> f64 {
    check_some(net, loss, eps, |_| true)
}

pub fn check_some<T: Scalar>(
    net: &RefNet<T>,
    loss: impl Fn(&RefNet<T>, &mut RefNet<f64>) -> f64,
    eps: f64,
    include: impl Fn(usize) -> bool,
) -> f64 {
    let mut grads = net.zeros_like();
    loss(net, &mut grads);
    let mut worst = 0.0f64;
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let n_tensors = analytic.len();
    for t in (0..n_tensors).filter(|&t| include(t)) {
        let mut numeric = vec![0.0; analytic[t].len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut probe = net.clone();
            let orig = probe.tensors_mut()[t][i];
            probe.tensors_mut()[t][i] = T::of(orig.wide() + eps);
            let up = loss(&probe, &mut net.zeros_like());
            probe.tensors_mut()[t][i] = T::of(orig.wide() - eps);
            let down = loss(&probe, &mut net.zeros_like());
            *slot = (up - down) / (2.0 * eps);
        }
        let diff: f64 = numeric.iter().zip(&analytic[t]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = numeric.iter().map(|v| v * v).sum::<f64>().sqrt().max(analytic[t].iter().map(|v| v * v).sum::<f64>().sqrt());
        if scale > 1e-12 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}

pub fn pretrain_case(seed: u64) -> (PretrainItem, BinaryMask, PatchMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target: Vec<f64> = (0..3 * 256).map(|_| rng.gen()).collect();
    let texture: Vec<f64> = (0..4 * 6).map(|_| rng.gen()).collect();
    let mask = rect_mask(16, 16, 0.5, seed).unwrap();
    let pmask = to_patch_mask(&mask, 8).unwrap();
    let mut pm = pmask.values().to_vec();
    pm[0] = 1;
    (
        PretrainItem {
            target,
            texture,
            channels: 3,
        },
        mask,
        PatchMask::new(2, 2, pm).unwrap(),
    )
}
