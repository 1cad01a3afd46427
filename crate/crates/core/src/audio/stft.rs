use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    Hamming,
    Hann,
}

/// Periodic analysis window of length `n`.
pub fn window(kind: WindowKind, n: usize) -> Vec<f64> {
    let (a0, a1) = match kind {
        WindowKind::Hamming => (0.54, 0.46),
        WindowKind::Hann => (0.5, 0.5),
    };
    (0..n)
        .map(|i| a0 - a1 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Magnitude spectrogram, frames × (window/2 + 1) bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitudes: Array2<f64>,
    pub hop: usize,
    pub window_size: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.magnitudes.nrows()
    }

    pub fn bins(&self) -> usize {
        self.magnitudes.ncols()
    }

    pub fn bin_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.window_size as f64
    }
}

/// Complex STFT, frames × bins, kept for resynthesis.
#[derive(Debug, Clone)]
pub struct ComplexSpectrogram {
    pub values: Array2<Complex64>,
    pub hop: usize,
    pub window_size: usize,
    pub kind: WindowKind,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn magnitude(&self) -> Spectrogram {
        Spectrogram {
            magnitudes: self.values.mapv(|c| c.norm()),
            hop: self.hop,
            window_size: self.window_size,
            sample_rate: self.sample_rate,
        }
    }
}

// Mirror index into [0, len) without repeating the edge sample.
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

/// Number of frames produced by a centered STFT.
pub fn frame_count(len: usize, hop: usize) -> usize {
    len / hop + 1
}

/// Centered (reflect-padded) complex STFT.
pub fn stft_complex(
    clip: &AudioClip,
    window_size: usize,
    hop: usize,
    kind: WindowKind,
) -> Result<ComplexSpectrogram> {
    if clip.is_empty() {
        return Err(Error::invalid("cannot analyse an empty clip"));
    }
    if window_size == 0 || hop == 0 {
        return Err(Error::invalid("window and hop must be positive"));
    }
    let samples = clip.samples();
    let len = samples.len();
    let win = window(kind, window_size);
    let half = (window_size / 2) as isize;
    let frames = frame_count(len, hop);
    let bins = window_size / 2 + 1;

    let fft = FftPlanner::<f64>::new().plan_fft_forward(window_size);
    let mut values = Array2::<Complex64>::zeros((frames, bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); window_size];
    for t in 0..frames {
        let start = (t * hop) as isize - half;
        for (n, slot) in buf.iter_mut().enumerate() {
            let s = samples[reflect(start + n as isize, len)] as f64;
            *slot = Complex64::new(s * win[n], 0.0);
        }
        fft.process(&mut buf);
        for (k, v) in values.row_mut(t).iter_mut().enumerate() {
            *v = buf[k];
        }
    }
    Ok(ComplexSpectrogram {
        values,
        hop,
        window_size,
        kind,
        sample_rate: clip.sample_rate(),
    })
}

/// Hamming-windowed magnitude STFT with centered frames, so a 2-s clip at
/// 44.1 kHz with hop 512 yields 173 frames.
pub fn stft(clip: &AudioClip, window_size: usize, hop: usize) -> Result<Spectrogram> {
    Ok(stft_complex(clip, window_size, hop, WindowKind::Hamming)?.magnitude())
}

/// Weighted overlap-add inverse of [`stft_complex`], trimmed to `len` samples.
pub fn istft(spec: &ComplexSpectrogram, len: usize) -> Result<AudioClip> {
    let n = spec.window_size;
    let bins = n / 2 + 1;
    if spec.values.ncols() != bins {
        return Err(Error::invalid(format!(
            "expected {bins} bins for window {n}, got {}",
            spec.values.ncols()
        )));
    }
    let win = window(spec.kind, n);
    let frames = spec.values.nrows();
    let half = n / 2;
    let padded_len = (frames.saturating_sub(1)) * spec.hop + n;
    let mut out = vec![0.0f64; padded_len];
    let mut norm = vec![0.0f64; padded_len];

    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..frames {
        let row = spec.values.row(t);
        for k in 0..bins {
            buf[k] = row[k];
        }
        for k in bins..n {
            buf[k] = row[n - k].conj();
        }
        ifft.process(&mut buf);
        let offset = t * spec.hop;
        for i in 0..n {
            out[offset + i] += buf[i].re / n as f64 * win[i];
            norm[offset + i] += win[i] * win[i];
        }
    }
    let samples = (0..len)
        .map(|i| {
            let j = i + half;
            match (out.get(j), norm.get(j)) {
                (Some(&v), Some(&w)) if w > 1e-10 => (v / w) as f32,
                _ => 0.0,
            }
        })
        .collect();
    AudioClip::new(samples, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, len: usize, rate: u32) -> AudioClip {
        let s = (0..len)
            .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin() as f32 * 0.5)
            .collect();
        AudioClip::new(s, rate).unwrap()
    }

    #[test]
    fn two_second_clip_has_173_frames() {
        let clip = AudioClip::silence(88_200, 44_100).unwrap();
        let spec = stft(&clip, 2048, 512).unwrap();
        assert_eq!(spec.frames(), 173);
        assert_eq!(spec.bins(), 1025);
    }

    #[test]
    fn silence_gives_zero_magnitudes() {
        let clip = AudioClip::silence(10_000, 44_100).unwrap();
        let spec = stft(&clip, 2048, 512).unwrap();
        assert!(spec.magnitudes.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn empty_clip_is_rejected() {
        let clip = AudioClip::new(vec![], 44_100).unwrap();
        assert!(matches!(stft(&clip, 2048, 512), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn reflect_padding_mirrors_without_edge_repeat() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(9, 5), 1);
        assert_eq!(reflect(3, 1), 0);
    }

    // Direct O(N^2) DFT of one windowed frame.
    fn naive_dft_magnitudes(frame: &[f64]) -> Vec<f64> {
        let n = frame.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &x) in frame.iter().enumerate() {
                    let ph = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += x * ph.cos();
                    im += x * ph.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn sine_peak_matches_direct_dft() {
        let clip = sine(1000.0, 4096, 44_100);
        let spec = stft(&clip, 2048, 1024).unwrap();
        // frame 2 is centered on sample 2048 and needs no padding
        let win = window(WindowKind::Hamming, 2048);
        let frame: Vec<f64> = (0..2048)
            .map(|n| clip.samples()[1024 + n] as f64 * win[n])
            .collect();
        let oracle = naive_dft_magnitudes(&frame);
        let row = spec.magnitudes.row(2);
        for (a, b) in row.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()));
        }
        let peak = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(peak, (1000.0f64 * 2048.0 / 44_100.0).round() as usize);
        assert_eq!(peak, 46);
    }

    #[test]
    fn hann_round_trip_reconstructs_signal() {
        let clip = sine(330.0, 20_000, 44_100);
        let spec = stft_complex(&clip, 2048, 512, WindowKind::Hann).unwrap();
        let back = istft(&spec, clip.len()).unwrap();
        let err = clip
            .samples()
            .iter()
            .zip(back.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(err < 1e-4, "max reconstruction error {err}");
    }
}
