//! Pure drum or bass loop detection for the selected sampling strategy.
//!
//! The default detector separates harmonic and percussive energy by median
//! filtering the magnitude spectrogram along time and along frequency.
//! Loops whose energy is mostly percussive count as drums; loops whose energy
//! sits almost entirely below 250 Hz count as bass.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::audio::{stft_complex, AudioClip, WindowKind, FEATURE_HOP, FEATURE_WINDOW};
use crate::error::{Error, Result};

/// Classifies loops as pure drum or bass.
pub trait DrumBassDetector {
    fn is_pure_drum_or_bass(&self, loop_id: &str, clip: &AudioClip) -> Result<bool>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicDetector {
    pub percussive_threshold: f64,
    pub bass_cutoff_hz: f64,
    pub bass_fraction: f64,
    /// Median filter length in frames and in bins.
    pub kernel: usize,
}

impl Default for HeuristicDetector {
    fn default() -> Self {
        Self {
            percussive_threshold: 0.8,
            bass_cutoff_hz: 250.0,
            bass_fraction: 0.9,
            kernel: 17,
        }
    }
}

/// Energy split of one loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyProfile {
    pub percussive_fraction: f64,
    pub low_fraction: f64,
}

fn median(buf: &mut [f64]) -> f64 {
    let mid = buf.len() / 2;
    let (_, m, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

// Median over a centered window of `kernel` cells along rows (`along_rows`)
// or columns, truncated at the edges.
fn median_filter(m: &Array2<f64>, kernel: usize, along_rows: bool) -> Array2<f64> {
    let (rows, cols) = m.dim();
    let half = kernel / 2;
    let mut out = Array2::zeros((rows, cols));
    let mut buf = Vec::with_capacity(kernel);
    for r in 0..rows {
        for c in 0..cols {
            buf.clear();
            if along_rows {
                let lo = r.saturating_sub(half);
                let hi = (r + half + 1).min(rows);
                buf.extend((lo..hi).map(|i| m[[i, c]]));
            } else {
                let lo = c.saturating_sub(half);
                let hi = (c + half + 1).min(cols);
                buf.extend((lo..hi).map(|j| m[[r, j]]));
            }
            out[[r, c]] = median(&mut buf);
        }
    }
    out
}

impl HeuristicDetector {
    pub fn profile(&self, clip: &AudioClip) -> Result<EnergyProfile> {
        let spec = stft_complex(clip, FEATURE_WINDOW, FEATURE_HOP, WindowKind::Hann)?;
        let mag = spec.values.mapv(|c| c.norm());
        let total: f64 = mag.iter().map(|m| m * m).sum();
        if total <= 1e-12 {
            return Err(Error::Undeterminable("silent clip".into()));
        }
        // frames run along rows: filtering along rows smooths in time
        let harmonic = median_filter(&mag, self.kernel, true);
        let percussive = median_filter(&mag, self.kernel, false);
        let mut perc_energy = 0.0;
        let mut low_energy = 0.0;
        let bin_hz = clip.sample_rate() as f64 / FEATURE_WINDOW as f64;
        for ((idx, &m), (&h, &p)) in mag.indexed_iter().zip(harmonic.iter().zip(percussive.iter())) {
            let e = m * m;
            let (h2, p2) = (h * h, p * p);
            let mask = if h2 + p2 > 0.0 { p2 / (h2 + p2) } else { 0.5 };
            perc_energy += mask * e;
            if (idx.1 as f64) * bin_hz < self.bass_cutoff_hz {
                low_energy += e;
            }
        }
        Ok(EnergyProfile {
            percussive_fraction: perc_energy / total,
            low_fraction: low_energy / total,
        })
    }
}

impl DrumBassDetector for HeuristicDetector {
    fn is_pure_drum_or_bass(&self, _loop_id: &str, clip: &AudioClip) -> Result<bool> {
        let p = self.profile(clip)?;
        Ok(p.percussive_fraction > self.percussive_threshold || p.low_fraction >= self.bass_fraction)
    }
}

/// Default heuristic on a single clip.
pub fn is_pure_drum_or_bass(clip: &AudioClip) -> Result<bool> {
    HeuristicDetector::default().is_pure_drum_or_bass("", clip)
}

/// Labels computed elsewhere, for example by a stem separation tool.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelDetector {
    pub labels: BTreeMap<String, bool>,
}

impl DrumBassDetector for LabelDetector {
    fn is_pure_drum_or_bass(&self, loop_id: &str, _clip: &AudioClip) -> Result<bool> {
        self.labels
            .get(loop_id)
            .copied()
            .ok_or_else(|| Error::Undeterminable(format!("no label for loop {loop_id}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{CANONICAL_RATE, LOOP_SAMPLES};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn clicks() -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = vec![0.0f32; LOOP_SAMPLES];
        for hit in 0..8 {
            let start = hit * LOOP_SAMPLES / 8;
            for i in 0..441 {
                let env = (-(i as f64) / 80.0).exp();
                s[start + i] = (rng.gen_range(-1.0..1.0) * env * 0.8) as f32;
            }
        }
        AudioClip::new(s, CANONICAL_RATE).unwrap()
    }

    fn organ_chord() -> AudioClip {
        let s = (0..LOOP_SAMPLES)
            .map(|i| {
                let t = i as f64 / CANONICAL_RATE as f64;
                [440.0, 554.37, 659.25]
                    .iter()
                    .map(|f| (2.0 * PI * f * t).sin() * 0.25)
                    .sum::<f64>() as f32
            })
            .collect();
        AudioClip::new(s, CANONICAL_RATE).unwrap()
    }

    fn bass_line() -> AudioClip {
        let s = (0..LOOP_SAMPLES)
            .map(|i| {
                let t = i as f64 / CANONICAL_RATE as f64;
                let f = if t < 1.0 { 55.0 } else { 82.41 };
                ((2.0 * PI * f * t).sin() * 0.6) as f32
            })
            .collect();
        AudioClip::new(s, CANONICAL_RATE).unwrap()
    }

    #[test]
    fn noise_clicks_are_drums() {
        let p = HeuristicDetector::default().profile(&clicks()).unwrap();
        assert!(p.percussive_fraction > 0.8, "{p:?}");
        assert!(is_pure_drum_or_bass(&clicks()).unwrap());
    }

    #[test]
    fn sustained_chord_is_not() {
        let p = HeuristicDetector::default().profile(&organ_chord()).unwrap();
        assert!(p.percussive_fraction < 0.2, "{p:?}");
        assert!(!is_pure_drum_or_bass(&organ_chord()).unwrap());
    }

    #[test]
    fn low_sustained_line_is_bass() {
        let p = HeuristicDetector::default().profile(&bass_line()).unwrap();
        assert!(p.low_fraction >= 0.9, "{p:?}");
        assert!(is_pure_drum_or_bass(&bass_line()).unwrap());
    }

    #[test]
    fn silence_is_undeterminable() {
        let clip = AudioClip::silence(LOOP_SAMPLES, CANONICAL_RATE).unwrap();
        assert!(matches!(is_pure_drum_or_bass(&clip), Err(Error::Undeterminable(_))));
    }

    #[test]
    fn labels_override_audio() {
        let det = LabelDetector {
            labels: BTreeMap::from([("a".to_string(), true), ("b".to_string(), false)]),
        };
        assert!(det.is_pure_drum_or_bass("a", &organ_chord()).unwrap());
        assert!(!det.is_pure_drum_or_bass("b", &clicks()).unwrap());
        assert!(det.is_pure_drum_or_bass("c", &clicks()).is_err());
    }

    #[test]
    fn median_filter_matches_sorted_window() {
        let m = ndarray::array![[1.0, 9.0, 2.0, 8.0], [3.0, 3.0, 7.0, 0.0]];
        let cols = median_filter(&m, 3, false);
        // window [1, 9] at the edge has two values; the upper middle is taken
        assert_eq!(cols.row(0).to_vec(), vec![9.0, 2.0, 8.0, 8.0]);
        let rows = median_filter(&m, 3, true);
        assert_eq!(rows.row(0).to_vec(), vec![3.0, 9.0, 7.0, 8.0]);
    }
}
