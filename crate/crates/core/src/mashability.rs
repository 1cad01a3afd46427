//! Rule-based mashability baseline in the style of AutoMashUpper.
//!
//! Each loop is summarized per beat by a chromagram, an onset pattern over
//! eight subdivisions and a three-band energy distribution. Two loops score
//! the mean of harmonic similarity (best over the twelve key shifts),
//! rhythmic similarity and spectral complementarity.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::audio::{stft, AudioClip, FEATURE_HOP, FEATURE_WINDOW};
use crate::error::{Error, Result};
use crate::extract::onset_envelope;
use crate::negatives::{BEATS_PER_LOOP, BEAT_SAMPLES};

pub const SUBDIVISIONS: usize = 8;
/// Band edges in Hz: low below the first, high above the second.
pub const BAND_EDGES: [f64; 2] = [250.0, 2500.0];
pub const BANDS: usize = 3;
/// Frequency range folded into the chromagram.
const CHROMA_RANGE: (f64, f64) = (27.5, 4200.0);
const SILENCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatSyncFeatures {
    /// Beats × 12 pitch classes starting at C; rows sum to 1, or 0 when silent.
    pub chroma: Array2<f64>,
    /// Beats × subdivisions onset strength.
    pub rhythm: Array2<f64>,
    /// Low, mid and high energy shares; uniform for silence.
    pub bands: [f64; BANDS],
    pub silent: bool,
}

fn require_canonical(clip: &AudioClip) -> Result<()> {
    if clip.is_canonical_loop() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "expected a canonical 2 s loop, got {} samples at {} Hz",
            clip.len(),
            clip.sample_rate()
        )))
    }
}

/// Pitch class (C = 0) of a frequency, rounded to the nearest semitone.
pub fn pitch_class(hz: f64) -> usize {
    let midi = 69.0 + 12.0 * (hz / 440.0).log2();
    (midi.round() as i64).rem_euclid(12) as usize
}

pub fn beat_sync_features(clip: &AudioClip) -> Result<BeatSyncFeatures> {
    require_canonical(clip)?;
    let spec = stft(clip, FEATURE_WINDOW, FEATURE_HOP)?;
    let mut chroma = Array2::<f64>::zeros((BEATS_PER_LOOP, 12));
    let mut bands = [0.0; BANDS];
    for (f, frame) in spec.magnitudes.rows().into_iter().enumerate() {
        let beat = (f * FEATURE_HOP / BEAT_SAMPLES).min(BEATS_PER_LOOP - 1);
        for (k, &m) in frame.iter().enumerate().skip(1) {
            let hz = spec.bin_hz(k);
            let e = m * m;
            let band = BAND_EDGES.iter().filter(|&&edge| hz >= edge).count();
            bands[band] += e;
            if (CHROMA_RANGE.0..=CHROMA_RANGE.1).contains(&hz) {
                chroma[[beat, pitch_class(hz)]] += e;
            }
        }
    }
    let total: f64 = bands.iter().sum();
    let silent = total <= SILENCE;
    if silent {
        return Ok(BeatSyncFeatures {
            chroma: Array2::zeros((BEATS_PER_LOOP, 12)),
            rhythm: Array2::zeros((BEATS_PER_LOOP, SUBDIVISIONS)),
            bands: [1.0 / BANDS as f64; BANDS],
            silent,
        });
    }
    bands.iter_mut().for_each(|b| *b /= total);
    for mut row in chroma.rows_mut() {
        let s = row.sum();
        if s > 0.0 {
            row.mapv_inplace(|v| v / s);
        }
    }

    // onsets are quantized to the nearest subdivision of the cyclic loop
    let slots = BEATS_PER_LOOP * SUBDIVISIONS;
    let slot_len = BEAT_SAMPLES as f64 / SUBDIVISIONS as f64;
    let mut rhythm = Array2::<f64>::zeros((BEATS_PER_LOOP, SUBDIVISIONS));
    for (t, flux) in onset_envelope(clip).into_iter().enumerate() {
        let sample = t * FEATURE_HOP;
        if sample >= clip.len() {
            break;
        }
        let slot = (sample as f64 / slot_len).round() as usize % slots;
        rhythm[[slot / SUBDIVISIONS, slot % SUBDIVISIONS]] += flux;
    }
    Ok(BeatSyncFeatures {
        chroma,
        rhythm,
        bands,
        silent,
    })
}

fn cosine(a: impl Iterator<Item = f64> + Clone, b: impl Iterator<Item = f64> + Clone) -> f64 {
    let dot: f64 = a.clone().zip(b.clone()).map(|(x, y)| x * y).sum();
    let na = a.map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}

fn harmonic_one_way(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (0..12)
        .map(|shift| {
            let rotated = b.iter().enumerate().map(|(i, _)| {
                let (row, pc) = (i / 12, i % 12);
                b[[row, (pc + shift) % 12]]
            });
            cosine(a.iter().copied(), rotated)
        })
        .fold(0.0, f64::max)
}

/// Best cosine similarity over the twelve pitch-class rotations.
pub fn harmonic_similarity(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() || a.ncols() != 12 {
        return Err(Error::shape(format!("chromagrams {:?} and {:?}", a.dim(), b.dim())));
    }
    // taking both directions makes the value exactly symmetric
    Ok(harmonic_one_way(a, b).max(harmonic_one_way(b, a)))
}

pub fn rhythmic_similarity(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("rhythm patterns {:?} and {:?}", a.dim(), b.dim())));
    }
    Ok(cosine(a.iter().copied(), b.iter().copied()))
}

fn balance_one_way(a: &[f64; BANDS], b: &[f64; BANDS]) -> f64 {
    let l1: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - (1.0 - y) / (BANDS - 1) as f64).abs())
        .sum();
    (1.0 - 0.5 * l1).clamp(0.0, 1.0)
}

/// How well each loop fills the other's spectral gaps, averaged over both directions.
pub fn spectral_balance(a: &[f64; BANDS], b: &[f64; BANDS]) -> f64 {
    (balance_one_way(a, b) + balance_one_way(b, a)) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mashability {
    pub harmonic: f64,
    pub rhythmic: f64,
    pub balance: f64,
    /// Equal-weight mean of the three components.
    pub score: f64,
}

pub fn mashability_of_features(a: &BeatSyncFeatures, b: &BeatSyncFeatures) -> Result<Mashability> {
    if a.silent || b.silent {
        return Err(Error::Undeterminable("mashability of a silent loop".into()));
    }
    let harmonic = harmonic_similarity(&a.chroma, &b.chroma)?;
    let rhythmic = rhythmic_similarity(&a.rhythm, &b.rhythm)?;
    let balance = spectral_balance(&a.bands, &b.bands);
    Ok(Mashability {
        harmonic,
        rhythmic,
        balance,
        score: (harmonic + rhythmic + balance) / 3.0,
    })
}

pub fn mashability(a: &AudioClip, b: &AudioClip) -> Result<Mashability> {
    mashability_of_features(&beat_sync_features(a)?, &beat_sync_features(b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{CANONICAL_RATE, LOOP_SAMPLES};
    use crate::synth;
    use std::f64::consts::PI;

    fn sine(hz: f64) -> AudioClip {
        let s = (0..LOOP_SAMPLES)
            .map(|i| (0.5 * (2.0 * PI * hz * i as f64 / CANONICAL_RATE as f64).sin()) as f32)
            .collect();
        AudioClip::new(s, CANONICAL_RATE).unwrap()
    }

    #[test]
    fn pitch_classes_of_reference_tones() {
        assert_eq!(pitch_class(440.0), 9);
        assert_eq!(pitch_class(261.63), 0);
        assert_eq!(pitch_class(110.0), 9);
        assert_eq!(pitch_class(466.16), 10);
    }

    #[test]
    fn a440_concentrates_on_a() {
        let f = beat_sync_features(&sine(440.0)).unwrap();
        for beat in 0..BEATS_PER_LOOP {
            assert!(f.chroma[[beat, 9]] >= 0.8, "{:?}", f.chroma.row(beat));
            assert!((f.chroma.row(beat).sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn silence_gives_zero_rows_and_uniform_bands() {
        let clip = AudioClip::silence(LOOP_SAMPLES, CANONICAL_RATE).unwrap();
        let f = beat_sync_features(&clip).unwrap();
        assert!(f.chroma.iter().all(|&v| v == 0.0));
        assert_eq!(f.bands, [1.0 / 3.0; 3]);
        assert!(matches!(mashability(&clip, &sine(440.0)), Err(Error::Undeterminable(_))));
    }

    #[test]
    fn clicks_land_on_the_first_subdivision() {
        let clicks = synth::click_track(120.0, 2.0, 0.0);
        let f = beat_sync_features(&clicks).unwrap();
        for beat in 0..BEATS_PER_LOOP {
            let row = f.rhythm.row(beat);
            let peak = (0..SUBDIVISIONS).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
            assert_eq!(peak, 0, "beat {beat}: {row:?}");
        }
    }

    #[test]
    fn self_similarity_is_one() {
        let clip = synth::low_loop().canonical();
        let m = mashability(&clip, &clip).unwrap();
        assert!((m.harmonic - 1.0).abs() < 1e-12);
        assert!((m.rhythmic - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_chroma_keeps_harmonic_similarity() {
        let f = beat_sync_features(&synth::low_loop().canonical()).unwrap();
        for k in 1..12 {
            let rotated = Array2::from_shape_fn(f.chroma.dim(), |(b, pc)| f.chroma[[b, (pc + k) % 12]]);
            assert!((harmonic_similarity(&f.chroma, &rotated).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bass_and_full_band_complement_each_other() {
        let bass = [1.0, 0.0, 0.0];
        let full = [1.0 / 3.0; 3];
        assert!((spectral_balance(&bass, &full) - 0.5).abs() < 1e-12);
        assert_eq!(spectral_balance(&bass, &bass), 0.0);
    }

    #[test]
    fn scores_are_symmetric() {
        let a = synth::low_loop().canonical();
        let b = synth::high_loop().canonical();
        assert_eq!(mashability(&a, &b).unwrap(), mashability(&b, &a).unwrap());
    }

    #[test]
    fn non_canonical_input_is_rejected() {
        let short = AudioClip::silence(100, CANONICAL_RATE).unwrap();
        assert!(matches!(beat_sync_features(&short), Err(Error::InvalidInput(_))));
    }
}
