//! Components that are mixtures of other components.
//!
//! An over-ranked factorization can spend a component on the sound of two
//! loops playing together. Its spectrogram is then close to a non-negative
//! combination of the others, and hashing cannot catch it because the blend
//! looks like neither source. Such a component is absorbed: its activation
//! moves onto the loops that explain it and its own row becomes zero.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::extract::LoopLayout;

/// Relative Frobenius residual below which a component counts as a mixture.
pub const REDUNDANT_RESIDUAL: f64 = 0.25;

const NNLS_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Absorption {
    pub layout: LoopLayout,
    /// Absorbed component → (receiving component, share of its activation).
    pub absorbed: BTreeMap<usize, Vec<(usize, f64)>>,
}

/// Non-negative least squares on a Gram matrix by multiplicative updates.
/// `gram[i][j] = <x_i, x_j>`, `b[i] = <x_i, y>`, `yy = <y, y>`.
fn nnls(gram: &[Vec<f64>], b: &[f64], yy: f64) -> (Vec<f64>, f64) {
    let n = b.len();
    let mut c: Vec<f64> = b.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
    for _ in 0..NNLS_ITERATIONS {
        for i in 0..n {
            let d: f64 = (0..n).map(|j| gram[i][j] * c[j]).sum();
            if d > 0.0 {
                c[i] *= b[i] / d;
            }
        }
    }
    let fit: f64 = (0..n)
        .map(|i| c[i] * (2.0 * b[i] - (0..n).map(|j| gram[i][j] * c[j]).sum::<f64>()))
        .sum();
    let residual = if yy > 0.0 { ((yy - fit).max(0.0) / yy).sqrt() } else { 0.0 };
    (c, residual)
}

/// Repeatedly absorbs the active component with the smallest mixture
/// residual while it stays under [`REDUNDANT_RESIDUAL`]. `masses[l]` is the
/// factor turning an activation of component `l` into layout units, so
/// activation moves as `share = c_j * masses[j] / masses[m]`.
pub fn absorb_redundant(spectrograms: &[Array2<f64>], masses: &[f64], layout: &LoopLayout) -> Result<Absorption> {
    let n = spectrograms.len();
    if masses.len() != n || layout.loops() != n {
        return Err(Error::invalid(format!(
            "{n} spectrograms, {} masses and {} layout rows",
            masses.len(),
            layout.loops()
        )));
    }
    if spectrograms.iter().any(|s| s.dim() != spectrograms[0].dim()) {
        return Err(Error::shape("loop spectrograms differ in shape"));
    }
    let gram: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| (&spectrograms[i] * &spectrograms[j]).sum()).collect())
        .collect();

    let mut layout = layout.clone();
    let mut absorbed = BTreeMap::new();
    let mut active: Vec<usize> = (0..n).filter(|&l| layout.row_total(l) > 0.0 && masses[l] > 0.0).collect();
    while active.len() >= 2 {
        let mut best: Option<(f64, usize, Vec<(usize, f64)>)> = None;
        for &m in &active {
            let others: Vec<usize> = active.iter().copied().filter(|&j| j != m).collect();
            let sub: Vec<Vec<f64>> = others.iter().map(|&i| others.iter().map(|&j| gram[i][j]).collect()).collect();
            let b: Vec<f64> = others.iter().map(|&i| gram[i][m]).collect();
            let (c, residual) = nnls(&sub, &b, gram[m][m]);
            if best.as_ref().map_or(true, |(r, _, _)| residual < *r) {
                let coeffs = others.into_iter().zip(c).filter(|&(_, c)| c > 0.0).collect();
                best = Some((residual, m, coeffs));
            }
        }
        let Some((residual, m, coeffs)) = best else { break };
        if residual >= REDUNDANT_RESIDUAL {
            break;
        }
        let row = layout.activations.row(m).to_owned();
        let shares: Vec<(usize, f64)> = coeffs.iter().map(|&(j, c)| (j, c * masses[j] / masses[m])).collect();
        for &(j, share) in &shares {
            layout.activations.row_mut(j).scaled_add(share, &row);
        }
        layout.activations.row_mut(m).fill(0.0);
        absorbed.insert(m, shares);
        active.retain(|&l| l != m);
    }
    Ok(Absorption { layout, absorbed })
}
