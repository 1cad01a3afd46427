//! Helpers shared by integration test targets.

#![allow(dead_code)]

use loopcompat::neural::gradcheck::{check_layer, numeric_derivative, random_tensor, relative_error};
use loopcompat::neural::layers::{BatchNorm, Conv2d, Dropout, Flatten, Linear, MaxPool2, Mode, PRelu};
use loopcompat::neural::loss::{bce_grad, bce_loss, bce_with_logit, contrastive_grad, contrastive_loss};
use loopcompat::neural::net::{ModelKind, Network, SkeletonShape};
use ndarray::{ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-4;

/// Worst relative error per check name over `cases` random shapes.
pub fn gradient_suite(cases: usize, seed: u64) -> Vec<(String, f64)> {
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |name: &str, err: f64| match worst.iter_mut().find(|(n, _)| n == name) {
        Some((_, w)) => *w = w.max(err),
        None => worst.push((name.to_string(), err)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let n = rng.gen_range(2..5);
        let c = rng.gen_range(1..4);
        let h = rng.gen_range(2..7);
        let w = rng.gen_range(2..7);
        let out = rng.gen_range(1..4);
        let feats = rng.gen_range(1..7);
        let case_seed = seed * 1000 + case as u64;

        let conv = Conv2d::new(c, out, 3, &mut rng);
        let x = random_tensor(&[n, c, h, w], 1.0, 0.0, &mut rng);
        record("conv2d", check_layer(&conv, &x, Mode::Train, EPS, case_seed).unwrap().worst());

        let lin = Linear::new(feats, out, &mut rng);
        let x = random_tensor(&[n, feats], 1.0, 0.0, &mut rng);
        record("linear", check_layer(&lin, &x, Mode::Train, EPS, case_seed).unwrap().worst());

        let mut bn = BatchNorm::new(c);
        for ch in 0..c {
            bn.gamma.value[ch] = rng.gen_range(0.5..1.5);
            bn.beta.value[ch] = rng.gen_range(-0.5..0.5);
            bn.running_mean[ch] = rng.gen_range(-0.5..0.5);
            bn.running_var[ch] = rng.gen_range(0.5..1.5);
        }
        let x = random_tensor(&[n, c, h, w], 1.0, 0.0, &mut rng);
        record("batchnorm_train", check_layer(&bn, &x, Mode::Train, EPS, case_seed).unwrap().worst());
        record("batchnorm_eval", check_layer(&bn, &x, Mode::Eval, EPS, case_seed).unwrap().worst());
        let bn1 = BatchNorm::new(feats);
        let x = random_tensor(&[n, feats], 1.0, 0.0, &mut rng);
        record("batchnorm_fc", check_layer(&bn1, &x, Mode::Train, EPS, case_seed).unwrap().worst());

        let mut prelu = PRelu::new(c);
        for ch in 0..c {
            prelu.slope.value[ch] = rng.gen_range(0.0..0.5);
        }
        let x = random_tensor(&[n, c, h, w], 1.0, 0.01, &mut rng);
        record("prelu", check_layer(&prelu, &x, Mode::Train, EPS, case_seed).unwrap().worst());

        let drop = Dropout::new(0.1, case_seed);
        let x = random_tensor(&[n, c, h, w], 1.0, 0.0, &mut rng);
        record("dropout", check_layer(&drop, &x, Mode::Train, EPS, case_seed).unwrap().worst());

        // distinct values at least 0.01 apart keep every pooling window's winner fixed
        let (ph, pw) = (2 * rng.gen_range(1..4), 2 * rng.gen_range(1..4));
        let mut values: Vec<f64> = (0..n * c * ph * pw).map(|i| i as f64 * 0.02 - 1.0).collect();
        values.shuffle(&mut rng);
        let x = ArrayD::from_shape_vec(IxDyn(&[n, c, ph, pw]), values).unwrap();
        record("maxpool", check_layer(&MaxPool2::new(), &x, Mode::Train, EPS, case_seed).unwrap().worst());

        let x = random_tensor(&[n, c, h, w], 1.0, 0.0, &mut rng);
        record("flatten", check_layer(&Flatten::new(), &x, Mode::Train, EPS, case_seed).unwrap().worst());

        let p: f64 = rng.gen_range(0.01..0.99);
        let y = f64::from(rng.gen_range(0..2u8));
        let numeric = numeric_derivative(|q| bce_loss(q, y), p, EPS);
        record("bce", relative_error(&[bce_grad(p, y)], &[numeric]));
        let z: f64 = rng.gen_range(-4.0..4.0);
        let numeric = numeric_derivative(|v| bce_with_logit(v, y).0, z, EPS);
        record("bce_logit", relative_error(&[bce_with_logit(z, y).1], &[numeric]));

        let margin = 1.0;
        let mut d: f64 = rng.gen_range(0.01..2.0);
        if (d - margin).abs() < 0.01 {
            d += 0.02;
        }
        let numeric = numeric_derivative(|v| contrastive_loss(v, y, margin).unwrap(), d, EPS);
        record("contrastive", relative_error(&[contrastive_grad(d, y, margin).unwrap()], &[numeric]));
    }
    worst
}

/// Whole-network check on a reduced skeleton.
pub fn skeleton_gradient(kind: ModelKind, seed: u64) -> f64 {
    let shape = SkeletonShape {
        in_channels: 1,
        height: 8,
        width: 8,
        conv_filters: [2, 2],
        kernel: 3,
        fc_features: [5, 4, 3],
        dropout: 0.1,
    };
    let net = Network::new(kind, shape, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&[4, 1, 8, 8], 1.0, 0.0, &mut rng);
    check_layer(&net.layers, &x, Mode::Train, EPS, seed).unwrap().worst()
}
