//! Audio primitives shared by every other stage: clips, WAV I/O, STFT,
//! log-mel features, resampling and time-stretching.

mod mel;
mod resample;
mod stft;
mod stretch;
pub mod wav;

pub use mel::{logmel, mel_energies, MelFilterbank, MelSpectrogram, LOG_EPSILON, MEL_NORM, N_MELS};
pub use resample::resample;
pub use stft::{istft, stft, stft_complex, window, ComplexSpectrogram, Spectrogram, WindowKind};
pub use stretch::{time_stretch, MAX_STRETCH_INPUT_SECS, MIN_STRETCH_INPUT_SECS};

use crate::error::{Error, Result};

/// Sample rate every clip is converted to on ingest.
pub const CANONICAL_RATE: u32 = 44_100;
/// Length of a normalized loop in seconds.
pub const LOOP_SECONDS: f64 = 2.0;
/// Sample count of a canonical loop (2 s at 44.1 kHz).
pub const LOOP_SAMPLES: usize = 88_200;
/// STFT window used for model features.
pub const FEATURE_WINDOW: usize = 2048;
/// STFT hop used for model features.
pub const FEATURE_HOP: usize = 512;

/// Mono PCM audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Averages interleaved channels into a mono clip.
    pub fn from_interleaved(interleaved: &[f32], channels: usize, sample_rate: u32) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("channel count must be positive"));
        }
        if channels == 1 {
            return Self::new(interleaved.to_vec(), sample_rate);
        }
        let samples = interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect();
        Self::new(samples, sample_rate)
    }

    pub fn silence(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            (self.energy() / self.samples.len() as f64).sqrt()
        }
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    /// Copies `[start, end)`; the range is clamped to the clip.
    pub fn slice(&self, start: usize, end: usize) -> AudioClip {
        let end = end.min(self.samples.len());
        let start = start.min(end);
        AudioClip {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    /// True for a 2-s loop at the canonical rate.
    pub fn is_canonical_loop(&self) -> bool {
        self.sample_rate == CANONICAL_RATE && self.samples.len() == LOOP_SAMPLES
    }

    pub(crate) fn with_samples(&self, samples: Vec<f32>) -> AudioClip {
        AudioClip {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

/// Sum of two clips scaled so the peak magnitude is 1 (left untouched when silent).
pub fn mix_peak_normalized(a: &AudioClip, b: &AudioClip) -> Result<AudioClip> {
    if a.sample_rate() != b.sample_rate() {
        return Err(Error::invalid("cannot mix clips with different sample rates"));
    }
    let len = a.len().max(b.len());
    let mut mixed = vec![0.0f32; len];
    for (m, s) in mixed.iter_mut().zip(a.samples()) {
        *m += s;
    }
    for (m, s) in mixed.iter_mut().zip(b.samples()) {
        *m += s;
    }
    let peak = mixed.iter().fold(0.0f32, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        mixed.iter_mut().for_each(|s| *s /= peak);
    }
    AudioClip::new(mixed, a.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_clips() {
        assert!(AudioClip::new(vec![0.0], 0).is_err());
        assert!(AudioClip::new(vec![f32::NAN], 44_100).is_err());
    }

    #[test]
    fn downmix_averages_channels() {
        let clip = AudioClip::from_interleaved(&[1.0, 0.0, 0.5, 0.5], 2, 48_000).unwrap();
        assert_eq!(clip.samples(), &[0.5, 0.5]);
    }

    #[test]
    fn mixing_is_symmetric_and_peak_normalized() {
        let a = AudioClip::new(vec![0.5, -0.25, 0.0], 100).unwrap();
        let b = AudioClip::new(vec![0.5, 0.0, 0.1], 100).unwrap();
        let ab = mix_peak_normalized(&a, &b).unwrap();
        let ba = mix_peak_normalized(&b, &a).unwrap();
        assert_eq!(ab, ba);
        assert_eq!(ab.peak(), 1.0);
    }
}
