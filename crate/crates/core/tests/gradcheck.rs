//! Finite-difference checks of the network's analytic gradients.

mod common;

use common::{check, check_some, pretrain_case, random_labels, tiny};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use terraseg::loss::LossWeights;
use terraseg::nn::refnet::RefNet;
use terraseg::pseudo::{PseudoGate, ThresholdPolicy};
use terraseg::train::{finetune_sample, pretrain_sample, FinetuneStep};

#[test]
fn pretrain_composite_matches_finite_differences_f64() {
    for seed in 0..10 {
        let net = RefNet::<f64>::init(tiny(), seed).unwrap();
        let (item, mask, pmask) = pretrain_case(seed);
        let w = LossWeights::default();
        let err = check(
            &net,
            |n, g| pretrain_sample(n, &item, &mask, &pmask, &w, 1.0, g).unwrap().total,
            1e-6,
        );
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn semi_composite_matches_finite_differences_f64() {
    for seed in 0..10 {
        let net = RefNet::<f64>::init(tiny(), 100 + seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..3 * 256).map(|_| rng.gen()).collect();
        let labels = random_labels(&mut rng, 3);
        let gate = if seed % 2 == 0 {
            PseudoGate::Threshold(ThresholdPolicy::new(0.5).unwrap())
        } else {
            PseudoGate::Ungated
        };
        let step = FinetuneStep {
            weights: LossWeights::default(),
            lambda_dice: 0.0,
            two_class_dice: true,
            gate: Some(gate),
        };
        let err = check(&net, |n, g| finetune_sample(n, &x, &labels, &step, 1.0, g).unwrap().total, 1e-6);
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

/// The discriminator is trained through its own head only, so its loss is
/// checked against the discriminator's parameters, and the encoder must
/// receive nothing from it.
#[test]
fn discriminator_dice_matches_finite_differences_f64() {
    for seed in 0..10 {
        let net = RefNet::<f64>::init(tiny(), 200 + seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..3 * 256).map(|_| rng.gen()).collect();
        let labels = random_labels(&mut rng, 3);
        let weights = LossWeights {
            ce: 0.0,
            ..LossWeights::default()
        };
        let step = FinetuneStep {
            weights,
            lambda_dice: 1.3,
            two_class_dice: seed % 2 == 0,
            gate: None,
        };
        let loss = |n: &RefNet<f64>, g: &mut RefNet<f64>| finetune_sample(n, &x, &labels, &step, 1.0, g).unwrap().total;
        let first_disc = net.tensors().len() - 2 * net.discriminator.len();
        let err = check_some(&net, loss, 1e-6, |t| t >= first_disc);
        assert!(err < 1e-5, "seed {seed}: {err}");
        let mut grads = net.zeros_like();
        loss(&net, &mut grads);
        assert!(grads.encoder.iter().all(|l| l.weight.iter().chain(&l.bias).all(|&v| v == 0.0)));
    }
}

#[test]
fn pretrain_composite_matches_finite_differences_f32() {
    for seed in 0..3 {
        let net = RefNet::<f32>::init(tiny(), seed).unwrap();
        let (item, mask, pmask) = pretrain_case(seed);
        let w = LossWeights::default();
        let err = check(
            &net,
            |n, g| pretrain_sample(n, &item, &mask, &pmask, &w, 1.0, g).unwrap().total,
            1e-2,
        );
        assert!(err < 1e-3, "seed {seed}: {err}");
    }
}

