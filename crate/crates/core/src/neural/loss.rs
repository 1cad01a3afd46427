//! Binary cross entropy and contrastive loss with their gradients.

use crate::error::{Error, Result};

/// Probabilities are clamped to this distance from 0 and 1.
pub const PROB_CLAMP: f64 = 1e-7;
/// Default contrastive margin.
pub const DEFAULT_MARGIN: f64 = 1.0;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `-(y ln p + (1 - y) ln(1 - p))` on the clamped probability.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = clamp_prob(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// dL/dp; zero where the clamp is active.
pub fn bce_grad(p: f64, y: f64) -> f64 {
    if p < PROB_CLAMP || p > 1.0 - PROB_CLAMP {
        return 0.0;
    }
    -y / p + (1.0 - y) / (1.0 - p)
}

/// Loss and dL/dz of the cross entropy of `sigmoid(z)`.
pub fn bce_with_logit(z: f64, y: f64) -> (f64, f64) {
    let p = sigmoid(z);
    let grad = if p < PROB_CLAMP || p > 1.0 - PROB_CLAMP { 0.0 } else { p - y };
    (bce_loss(p, y), grad)
}

fn check_distance(d: f64) -> Result<()> {
    if d.is_finite() && d >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("distance must be finite and non-negative, got {d}")))
    }
}

/// `y d^2 + (1 - y) max(0, margin - d)^2`.
pub fn contrastive_loss(d: f64, y: f64, margin: f64) -> Result<f64> {
    check_distance(d)?;
    Ok(y * d * d + (1.0 - y) * (margin - d).max(0.0).powi(2))
}

/// dL/dd of [`contrastive_loss`].
pub fn contrastive_grad(d: f64, y: f64, margin: f64) -> Result<f64> {
    check_distance(d)?;
    Ok(2.0 * y * d - 2.0 * (1.0 - y) * (margin - d).max(0.0))
}

/// Euclidean distance between two embeddings.
pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("embeddings of length {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
}
