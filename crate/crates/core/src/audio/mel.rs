use ndarray::Array2;

use super::{Spectrogram, FEATURE_WINDOW};
use crate::error::{Error, Result};

pub const N_MELS: usize = 128;
/// Offset inside the log so silent bins stay finite.
pub const LOG_EPSILON: f64 = 1e-10;
/// Dynamic range kept below the loudest cell: 80 dB of magnitude, in nepers.
/// Filter normalization, recorded next to every cached feature map.
pub const MEL_NORM: &str = "slaney";

const FLOOR_RANGE: f64 = 9.210_340_371_976_184; // ln(1e4)

// Slaney mel scale: linear below 1 kHz, logarithmic above.
const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;
const LOG_STEP: f64 = 0.068_751_777_420_949_12; // ln(6.4) / 27

pub fn hz_to_mel(hz: f64) -> f64 {
    if hz >= MIN_LOG_HZ {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / LOG_STEP
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel >= MIN_LOG_MEL {
        MIN_LOG_HZ * (LOG_STEP * (mel - MIN_LOG_MEL)).exp()
    } else {
        mel * F_SP
    }
}

/// Triangular filters spanning 0 Hz to Nyquist, area-normalized
/// (each filter scaled by 2 / bandwidth).
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// n_mels × bins
    pub weights: Array2<f64>,
    pub sample_rate: u32,
    pub n_fft: usize,
    half_widths: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, n_fft: usize, n_mels: usize) -> Self {
        let bins = n_fft / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(nyquist));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz: Vec<f64> = (0..bins)
            .map(|k| k as f64 * sample_rate as f64 / n_fft as f64)
            .collect();
        let mut weights = Array2::zeros((n_mels, bins));
        let mut half_widths = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (right - left);
            half_widths.push((right - left) / 2.0);
            for (k, &f) in bin_hz.iter().enumerate() {
                let rising = (f - left) / (center - left);
                let falling = (right - f) / (right - center);
                let w = rising.min(falling).max(0.0);
                weights[[m, k]] = w * norm;
            }
        }
        Self {
            weights,
            sample_rate,
            n_fft,
            half_widths,
        }
    }

    /// Per-band factors that undo the area normalization, turning mel
    /// energies back into summed linear magnitudes.
    pub fn band_gains(&self) -> &[f64] {
        &self.half_widths
    }

    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }

    /// frames × bins magnitudes → frames × n_mels linear mel energies.
    pub fn apply(&self, magnitudes: &Array2<f64>) -> Result<Array2<f64>> {
        if magnitudes.ncols() != self.weights.ncols() {
            return Err(Error::invalid(format!(
                "spectrogram has {} bins, filterbank expects {}",
                magnitudes.ncols(),
                self.weights.ncols()
            )));
        }
        Ok(magnitudes.dot(&self.weights.t()))
    }
}

/// Log-magnitude mel spectrogram, frames × mel bins.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array2<f64>,
    pub floor_db: f64,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.values.ncols()
    }
}

fn check_feature_bins(spec: &Spectrogram) -> Result<()> {
    let expected = FEATURE_WINDOW / 2 + 1;
    if spec.bins() != expected || spec.window_size != FEATURE_WINDOW {
        return Err(Error::invalid(format!(
            "expected a {FEATURE_WINDOW}-point spectrogram with {expected} bins, got {} bins",
            spec.bins()
        )));
    }
    Ok(())
}

/// Linear (pre-log) mel energies of a 2048-point spectrogram.
pub fn mel_energies(spec: &Spectrogram, n_mels: usize) -> Result<Array2<f64>> {
    check_feature_bins(spec)?;
    MelFilterbank::new(spec.sample_rate, spec.window_size, n_mels).apply(&spec.magnitudes)
}

/// Natural-log mel spectrogram `ln(mel + 1e-10)`, clamped 80 dB below its maximum.
pub fn logmel(spec: &Spectrogram, n_mels: usize) -> Result<MelSpectrogram> {
    let mut values = mel_energies(spec, n_mels)?.mapv(|x| (x + LOG_EPSILON).ln());
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor_db = max - FLOOR_RANGE;
    values.mapv_inplace(|v| v.max(floor_db));
    Ok(MelSpectrogram { values, floor_db })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{stft, AudioClip};
    use std::f64::consts::PI;

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 440.0, 999.0, 1000.0, 4000.0, 22_050.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-6);
        }
    }

    #[test]
    fn filters_are_nonnegative_and_cover_every_band() {
        let fb = MelFilterbank::new(44_100, 2048, 128);
        assert!(fb.weights.iter().all(|&w| w >= 0.0));
        for row in fb.weights.rows() {
            assert!(row.iter().any(|&w| w > 0.0));
        }
    }

    #[test]
    fn zero_spectrogram_maps_to_log_epsilon() {
        let clip = AudioClip::silence(88_200, 44_100).unwrap();
        let mel = logmel(&stft(&clip, 2048, 512).unwrap(), 128).unwrap();
        assert_eq!(mel.values.dim(), (173, 128));
        let expected = LOG_EPSILON.ln();
        assert!(mel.values.iter().all(|&v| v == expected));
    }

    #[test]
    fn wrong_bin_count_is_rejected() {
        let clip = AudioClip::silence(4096, 44_100).unwrap();
        let spec = stft(&clip, 1024, 512).unwrap();
        assert!(matches!(logmel(&spec, 128), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn sine_argmax_matches_explicit_filterbank_product() {
        let s: Vec<f32> = (0..88_200)
            .map(|i| (2.0 * PI * 440.0 * i as f64 / 44_100.0).sin() as f32)
            .collect();
        let spec = stft(&AudioClip::new(s, 44_100).unwrap(), 2048, 512).unwrap();
        let mel = logmel(&spec, 128).unwrap();
        let fb = MelFilterbank::new(44_100, 2048, 128);
        for t in [0, 50, 172] {
            // explicit matrix-vector product, one filter at a time
            let oracle: Vec<f64> = (0..128)
                .map(|m| {
                    (0..1025)
                        .map(|k| fb.weights[[m, k]] * spec.magnitudes[[t, k]])
                        .sum()
                })
                .collect();
            let argmax = |v: &[f64]| {
                v.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0
            };
            let row: Vec<f64> = mel.values.row(t).to_vec();
            assert_eq!(argmax(&row), argmax(&oracle));
        }
    }
}
