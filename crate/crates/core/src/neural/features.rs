//! Network inputs: log-mel maps of loops and of two-loop mixes, and the
//! per-bin standardization fitted on training data.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::audio::{logmel, mix_peak_normalized, stft, AudioClip, FEATURE_HOP, FEATURE_WINDOW, N_MELS};
use crate::error::{Error, Result};

fn require_canonical(clip: &AudioClip) -> Result<()> {
    if clip.is_canonical_loop() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "model input must be a 2 s loop at 44.1 kHz, got {} samples at {} Hz",
            clip.len(),
            clip.sample_rate()
        )))
    }
}

/// 173 × 128 log-mel map of one canonical loop.
pub fn loop_features(clip: &AudioClip) -> Result<Array2<f64>> {
    require_canonical(clip)?;
    Ok(logmel(&stft(clip, FEATURE_WINDOW, FEATURE_HOP)?, N_MELS)?.values)
}

/// Log-mel map of the peak-normalized sum of two canonical loops.
pub fn mix_features(a: &AudioClip, b: &AudioClip) -> Result<Array2<f64>> {
    require_canonical(a)?;
    require_canonical(b)?;
    loop_features(&mix_peak_normalized(a, b)?)
}

/// Per mel bin mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(bins: usize) -> Self {
        Self {
            mean: vec![0.0; bins],
            std: vec![1.0; bins],
        }
    }

    /// Statistics over every frame of every map.
    pub fn fit<'a>(maps: impl IntoIterator<Item = &'a Array2<f64>>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for m in maps {
            if sum.is_empty() {
                sum = vec![0.0; m.ncols()];
                sq = vec![0.0; m.ncols()];
            } else if m.ncols() != sum.len() {
                return Err(Error::shape(format!("map with {} bins, expected {}", m.ncols(), sum.len())));
            }
            for row in m.rows() {
                for ((s, q), &v) in sum.iter_mut().zip(sq.iter_mut()).zip(row) {
                    *s += v;
                    *q += v * v;
                }
            }
            count += m.nrows();
        }
        if count == 0 {
            return Err(Error::InsufficientData("no feature frames to standardize".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let sd = (q / n - m * m).max(0.0).sqrt();
                if sd > 1e-8 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, map: &Array2<f64>) -> Result<Array2<f64>> {
        if map.ncols() != self.mean.len() {
            return Err(Error::shape(format!("map with {} bins, expected {}", map.ncols(), self.mean.len())));
        }
        let mut out = map.clone();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{CANONICAL_RATE, LOOP_SAMPLES};

    #[test]
    fn loop_map_is_173_by_128() {
        let clip = crate::synth::low_loop().canonical();
        assert_eq!(loop_features(&clip).unwrap().dim(), (173, 128));
        let short = AudioClip::silence(LOOP_SAMPLES - 1, CANONICAL_RATE).unwrap();
        assert!(matches!(loop_features(&short), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn mix_is_order_independent() {
        let a = crate::synth::low_loop().canonical();
        let b = crate::synth::high_loop().canonical();
        assert_eq!(mix_features(&a, &b).unwrap(), mix_features(&b, &a).unwrap());
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_spread() {
        let a = ndarray::array![[1.0, 5.0], [3.0, 5.0]];
        let b = ndarray::array![[5.0, 5.0], [7.0, 5.0]];
        let st = Standardizer::fit([&a, &b]).unwrap();
        assert_eq!(st.mean, vec![4.0, 5.0]);
        assert!((st.std[0] - 5f64.sqrt()).abs() < 1e-12);
        // a constant bin keeps unit scale
        assert_eq!(st.std[1], 1.0);
        let z = st.apply(&a).unwrap();
        assert!((z[[0, 0]] + 3.0 / 5f64.sqrt()).abs() < 1e-12);
        assert!(Standardizer::fit(std::iter::empty()).is_err());
    }
}
