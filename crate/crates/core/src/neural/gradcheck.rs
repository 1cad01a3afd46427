//! Central finite-difference gradient checking.
//!
//! The probe loss is `sum(r * f(x))` for a fixed random `r`, so the
//! backward pass is seeded with `r`. Every coordinate of the input and of
//! every parameter is perturbed by `±eps` on a fresh clone of the layer,
//! which replays the same dropout masks.

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Layer, Mode};
use crate::error::Result;

/// `|a - n| / (|a| + |n|)` over whole gradient vectors; 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    if na + nn == 0.0 {
        0.0
    } else {
        diff / (na + nn)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    /// `None` when the layer does not propagate an input gradient.
    pub input: Option<f64>,
    pub params: Vec<(String, f64)>,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.params.iter().map(|(_, e)| *e).chain(self.input).fold(0.0, f64::max)
    }
}

fn probe<L: Layer + Clone>(layer: &L, x: &ArrayD<f64>, r: &ArrayD<f64>, mode: Mode) -> Result<f64> {
    let mut l = layer.clone();
    let y = l.forward(x.clone(), mode)?;
    Ok(y.iter().zip(r.iter()).map(|(a, b)| a * b).sum())
}

/// Compares analytic and numeric gradients of `layer` at `x`.
pub fn check_layer<L: Layer + Clone>(layer: &L, x: &ArrayD<f64>, mode: Mode, eps: f64, seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut analytic_layer = layer.clone();
    let y = analytic_layer.forward(x.clone(), mode)?;
    let r = ArrayD::from_shape_simple_fn(y.raw_dim(), || rng.gen_range(-1.0..1.0));
    let dx = analytic_layer.backward(r.clone())?;

    let input = if dx.shape() == x.shape() {
        let mut numeric = Vec::with_capacity(x.len());
        let mut xp = x.clone();
        for i in 0..x.len() {
            let orig = xp.as_slice_mut().expect("standard layout")[i];
            xp.as_slice_mut().expect("standard layout")[i] = orig + eps;
            let up = probe(layer, &xp, &r, mode)?;
            xp.as_slice_mut().expect("standard layout")[i] = orig - eps;
            let down = probe(layer, &xp, &r, mode)?;
            xp.as_slice_mut().expect("standard layout")[i] = orig;
            numeric.push((up - down) / (2.0 * eps));
        }
        let analytic: Vec<f64> = dx.iter().copied().collect();
        Some(relative_error(&analytic, &numeric))
    } else {
        None
    };

    let analytic_grads: Vec<(String, Vec<f64>)> = analytic_layer
        .params()
        .into_iter()
        .map(|(n, p)| (n.to_string(), p.grad.iter().copied().collect()))
        .collect();
    let mut params = Vec::new();
    for (pi, (name, analytic)) in analytic_grads.iter().enumerate() {
        let mut numeric = Vec::with_capacity(analytic.len());
        for j in 0..analytic.len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut l = layer.clone();
                {
                    let mut ps = l.params();
                    let v = ps[pi].1.value.as_slice_mut().expect("standard layout");
                    v[j] += delta;
                }
                let y = l.forward(x.clone(), mode)?;
                Ok(y.iter().zip(r.iter()).map(|(a, b)| a * b).sum())
            };
            let up = eval(eps)?;
            let down = eval(-eps)?;
            numeric.push((up - down) / (2.0 * eps));
        }
        params.push((name.clone(), relative_error(analytic, &numeric)));
    }
    Ok(GradReport { input, params })
}

/// Uniform values in ±`scale`, nudged at least `gap` away from zero so
/// that piecewise-linear kinks are not straddled by the perturbation.
pub fn random_tensor(shape: &[usize], scale: f64, gap: f64, rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || {
        let v: f64 = rng.gen_range(gap..scale);
        if rng.gen::<bool>() {
            v
        } else {
            -v
        }
    })
}

/// Scalar derivative by central differences.
pub fn numeric_derivative(f: impl Fn(f64) -> f64, x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::layers::Linear;

    #[test]
    fn identical_gradients_have_zero_error() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert!((relative_error(&[1.0], &[-1.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_layer_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layer = Linear::new(5, 3, &mut rng);
        let x = random_tensor(&[4, 5], 1.0, 0.0, &mut rng);
        let report = check_layer(&layer, &x, Mode::Train, 1e-4, 0).unwrap();
        assert!(report.worst() < 1e-6, "{report:?}");
        assert_eq!(report.params.len(), 2);
    }
}
