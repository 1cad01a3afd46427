use std::fmt;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HASH_SIDE: usize = 8;

/// 64-bit average hash of a matrix; bit `i` is cell `i` of the 8×8
/// thumbnail in row-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct SpectrogramHash(pub u64);

impl SpectrogramHash {
    pub fn hamming(self, other: SpectrogramHash) -> u32 {
        (self.0 ^ other.0).count_ones()
    }

    pub fn bits_set(self) -> u32 {
        self.0.count_ones()
    }
}

impl fmt::Display for SpectrogramHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl From<SpectrogramHash> for String {
    fn from(h: SpectrogramHash) -> String {
        h.to_string()
    }
}

impl TryFrom<String> for SpectrogramHash {
    type Error = std::num::ParseIntError;

    fn try_from(s: String) -> std::result::Result<Self, Self::Error> {
        u64::from_str_radix(&s, 16).map(SpectrogramHash)
    }
}

// Triangle-filter weights for resizing `src` samples onto `dst` samples.
// The filter widens with the scale factor when shrinking, so every input
// cell contributes.
fn resize_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    let support = scale.max(1.0);
    (0..dst)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale;
            let lo = (center - support).floor().max(0.0) as usize;
            let hi = ((center + support).ceil() as usize).min(src);
            let mut taps: Vec<(usize, f64)> = (lo..hi)
                .map(|j| {
                    let x = (j as f64 + 0.5 - center) / support;
                    (j, (1.0 - x.abs()).max(0.0))
                })
                .filter(|&(_, w)| w > 0.0)
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            if total > 0.0 {
                taps.iter_mut().for_each(|t| t.1 /= total);
            } else {
                // degenerate: fall back to the nearest sample
                taps = vec![((center.floor() as usize).min(src - 1), 1.0)];
            }
            taps
        })
        .collect()
}

/// Bilinear (triangle-filter) resize of a matrix.
pub fn bilinear_resize(m: ArrayView2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    let rw = resize_weights(m.nrows(), rows);
    let cw = resize_weights(m.ncols(), cols);
    let mut tmp = Array2::<f64>::zeros((m.nrows(), cols));
    for r in 0..m.nrows() {
        for (c, taps) in cw.iter().enumerate() {
            tmp[[r, c]] = taps.iter().map(|&(j, w)| w * m[[r, j]]).sum();
        }
    }
    let mut out = Array2::zeros((rows, cols));
    for (r, taps) in rw.iter().enumerate() {
        for c in 0..cols {
            out[[r, c]] = taps.iter().map(|&(j, w)| w * tmp[[j, c]]).sum();
        }
    }
    out
}

/// Average hash: shrink to 8×8, set a bit for every cell strictly above the mean.
pub fn average_hash(matrix: ArrayView2<f64>) -> Result<SpectrogramHash> {
    if matrix.is_empty() {
        return Err(Error::invalid("cannot hash an empty matrix"));
    }
    let thumb = bilinear_resize(matrix, HASH_SIDE, HASH_SIDE);
    let mean = thumb.sum() / (HASH_SIDE * HASH_SIDE) as f64;
    let bits = thumb
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > mean)
        .fold(0u64, |acc, (i, _)| acc | (1u64 << i));
    Ok(SpectrogramHash(bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_matrices_have_distance_zero() {
        let m = Array2::from_shape_fn((64, 128), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let a = average_hash(m.view()).unwrap();
        let b = average_hash(m.clone().view()).unwrap();
        assert_eq!(a.hamming(b), 0);
    }

    #[test]
    fn constant_matrix_sets_no_bits() {
        let m = Array2::from_elem((64, 128), 3.5);
        assert_eq!(average_hash(m.view()).unwrap().0, 0);
    }

    #[test]
    fn checkerboard_sets_half_the_bits() {
        let m = Array2::from_shape_fn((8, 8), |(i, j)| ((i + j) % 2) as f64);
        // thumbnail of an 8×8 input is the input itself; mean is 0.5
        let expected: u64 = (0..64)
            .filter(|i| (i / 8 + i % 8) % 2 == 1)
            .fold(0, |acc, i| acc | (1 << i));
        let h = average_hash(m.view()).unwrap();
        assert_eq!(h.bits_set(), 32);
        assert_eq!(h.0, expected);
    }

    #[test]
    fn empty_matrix_is_rejected() {
        let m = Array2::<f64>::zeros((0, 4));
        assert!(average_hash(m.view()).is_err());
    }

    #[test]
    fn hash_is_scale_invariant() {
        let m = Array2::from_shape_fn((20, 30), |(i, j)| ((i * j) % 13) as f64 + 0.5);
        let a = average_hash(m.view()).unwrap();
        let b = average_hash(m.mapv(|v| v * 4.0).view()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hex_form_round_trips() {
        let h = SpectrogramHash(0x00ff_1234_abcd_0001);
        let s: String = h.into();
        assert_eq!(SpectrogramHash::try_from(s).unwrap(), h);
    }

    proptest! {
        #[test]
        fn hamming_is_a_metric(a: u64, b: u64, c: u64) {
            let (a, b, c) = (SpectrogramHash(a), SpectrogramHash(b), SpectrogramHash(c));
            prop_assert_eq!(a.hamming(b), b.hamming(a));
            prop_assert_eq!(a.hamming(a), 0);
            prop_assert!(a.hamming(c) <= a.hamming(b) + b.hamming(c));
        }
    }
}
