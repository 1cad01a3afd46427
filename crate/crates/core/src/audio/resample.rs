use std::f64::consts::PI;

use super::AudioClip;
use crate::error::{Error, Result};

/// Zero crossings of the sinc kept on each side of the interpolation point.
const HALF_TAPS: usize = 32;
/// Above this many phases the filter is evaluated directly per sample.
const MAX_TABLE_PHASES: usize = 4096;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

// Blackman window over |x| <= 1.
fn blackman(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        0.42 + 0.5 * (PI * x).cos() + 0.08 * (2.0 * PI * x).cos()
    }
}

struct Kernel {
    cutoff: f64,
    half_width: f64,
}

impl Kernel {
    fn weight(&self, dist: f64) -> f64 {
        self.cutoff * sinc(self.cutoff * dist) * blackman(dist / self.half_width)
    }
}

/// Band-limited windowed-sinc resampler. Equal rates return the input unchanged.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::invalid("target rate must be positive"));
    }
    let source_rate = clip.sample_rate();
    if source_rate == target_rate {
        return Ok(clip.clone());
    }
    let g = gcd(source_rate as u64, target_rate as u64);
    let up = (target_rate as u64 / g) as usize; // L
    let down = (source_rate as u64 / g) as usize; // M
    let x = clip.samples();
    let out_len = ((x.len() as u128 * up as u128 + down as u128 / 2) / down as u128) as usize;

    let cutoff = (target_rate as f64 / source_rate as f64).min(1.0);
    let kernel = Kernel {
        cutoff,
        half_width: HALF_TAPS as f64 / cutoff,
    };
    let reach = kernel.half_width.ceil() as isize;
    let taps = 2 * reach as usize + 1;

    // Output n sits at input position n*M/L = base + phase/L.
    let table: Option<Vec<Vec<f64>>> = (up <= MAX_TABLE_PHASES).then(|| {
        (0..up)
            .map(|phase| {
                let frac = phase as f64 / up as f64;
                (0..taps)
                    .map(|j| kernel.weight(frac - (j as isize - reach) as f64))
                    .collect()
            })
            .collect()
    });

    let len = x.len() as isize;
    let samples = (0..out_len)
        .map(|n| {
            let pos = n as u128 * down as u128;
            let base = (pos / up as u128) as isize;
            let phase = (pos % up as u128) as usize;
            let mut acc = 0.0f64;
            for j in 0..taps {
                let k = base + j as isize - reach;
                if k < 0 || k >= len {
                    continue;
                }
                let w = match &table {
                    Some(t) => t[phase][j],
                    None => kernel.weight(phase as f64 / up as f64 - (j as isize - reach) as f64),
                };
                acc += w * x[k as usize] as f64;
            }
            acc as f32
        })
        .collect();
    AudioClip::new(samples, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::stft;

    fn sine(freq: f64, secs: f64, rate: u32) -> AudioClip {
        let n = (secs * rate as f64) as usize;
        let s = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin() as f32 * 0.8)
            .collect();
        AudioClip::new(s, rate).unwrap()
    }

    fn peak_hz(clip: &AudioClip) -> f64 {
        let spec = stft(clip, 2048, 512).unwrap();
        let mid = spec.frames() / 2;
        let row = spec.magnitudes.row(mid);
        let k = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        spec.bin_hz(k)
    }

    #[test]
    fn identity_rate_is_bit_identical() {
        let clip = sine(440.0, 0.1, 44_100);
        assert_eq!(resample(&clip, 44_100).unwrap(), clip);
    }

    #[test]
    fn doubling_rate_doubles_length() {
        let clip = sine(440.0, 0.5, 22_050);
        let up = resample(&clip, 44_100).unwrap();
        assert!((up.len() as i64 - 2 * clip.len() as i64).abs() <= 1);
    }

    #[test]
    fn downsampling_preserves_tone_frequency() {
        let clip = sine(1000.0, 0.5, 48_000);
        let out = resample(&clip, 44_100).unwrap();
        let bin = 44_100.0 / 2048.0;
        assert!((peak_hz(&out) - 1000.0).abs() <= bin);
        assert!((out.duration() - clip.duration()).abs() <= 1.0 / 44_100.0);
    }

    #[test]
    fn zero_rate_is_rejected() {
        let clip = sine(440.0, 0.01, 44_100);
        assert!(resample(&clip, 0).is_err());
    }
}
