use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex64;

use super::stft::{istft, stft_complex, ComplexSpectrogram, WindowKind};
use super::AudioClip;
use crate::error::{Error, Result};

pub const MIN_STRETCH_INPUT_SECS: f64 = 0.25;
pub const MAX_STRETCH_INPUT_SECS: f64 = 16.0;

const PV_WINDOW: usize = 2048;
const PV_HOP: usize = 512;

fn wrap_phase(p: f64) -> f64 {
    p - 2.0 * PI * ((p + PI) / (2.0 * PI)).floor()
}

/// Phase-vocoder time stretch to `target_secs`, keeping pitch. The output has
/// exactly `round(target_secs * rate)` samples; a clip already at that length
/// is returned unchanged.
pub fn time_stretch(clip: &AudioClip, target_secs: f64) -> Result<AudioClip> {
    let duration = clip.duration();
    if !(duration > MIN_STRETCH_INPUT_SECS && duration < MAX_STRETCH_INPUT_SECS) {
        return Err(Error::invalid(format!(
            "clip duration {duration:.3} s outside ({MIN_STRETCH_INPUT_SECS}, {MAX_STRETCH_INPUT_SECS}) s"
        )));
    }
    if !(target_secs > 0.0 && target_secs.is_finite()) {
        return Err(Error::invalid("target duration must be positive"));
    }
    let target_len = (target_secs * clip.sample_rate() as f64).round() as usize;
    if target_len == clip.len() {
        return Ok(clip.clone());
    }

    let spec = stft_complex(clip, PV_WINDOW, PV_HOP, WindowKind::Hann)?;
    let rate = clip.len() as f64 / target_len as f64;
    let input = &spec.values;
    let (frames, bins) = input.dim();

    let steps: Vec<f64> = (0..)
        .map(|i| i as f64 * rate)
        .take_while(|&t| t < frames as f64)
        .collect();
    let advance: Vec<f64> = (0..bins)
        .map(|k| 2.0 * PI * k as f64 * PV_HOP as f64 / PV_WINDOW as f64)
        .collect();
    let frame = |t: usize| -> Option<ndarray::ArrayView1<Complex64>> {
        (t < frames).then(|| input.row(t))
    };

    let mut out = Array2::<Complex64>::zeros((steps.len(), bins));
    let mut phase: Vec<f64> = input.row(0).iter().map(|c| c.arg()).collect();
    for (i, &step) in steps.iter().enumerate() {
        let t0 = step.floor() as usize;
        let alpha = step - t0 as f64;
        let (a, b) = (frame(t0).unwrap(), frame(t0 + 1));
        for k in 0..bins {
            let (mag_b, arg_b) = b.map_or((0.0, 0.0), |b| (b[k].norm(), b[k].arg()));
            let mag = (1.0 - alpha) * a[k].norm() + alpha * mag_b;
            out[[i, k]] = Complex64::from_polar(mag, phase[k]);
            let delta = wrap_phase(arg_b - a[k].arg() - advance[k]);
            phase[k] += advance[k] + delta;
        }
    }
    let stretched = ComplexSpectrogram {
        values: out,
        ..spec
    };
    istft(&stretched, target_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::stft;

    fn sine(freq: f64, secs: f64) -> AudioClip {
        let n = (secs * 44_100.0) as usize;
        let s = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / 44_100.0).sin() as f32 * 0.5)
            .collect();
        AudioClip::new(s, 44_100).unwrap()
    }

    fn dominant_bin(clip: &AudioClip) -> usize {
        let spec = stft(clip, 2048, 512).unwrap();
        let mid = spec.frames() / 2;
        spec.magnitudes
            .row(mid)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0
    }

    #[test]
    fn unit_ratio_passes_samples_through() {
        let clip = sine(220.0, 2.0);
        assert_eq!(time_stretch(&clip, 2.0).unwrap(), clip);
    }

    #[test]
    fn stretching_keeps_pitch() {
        let clip = sine(440.0, 1.0);
        let out = time_stretch(&clip, 2.0).unwrap();
        assert_eq!(out.len(), 88_200);
        assert_eq!(dominant_bin(&out), dominant_bin(&clip));
    }

    #[test]
    fn compressing_hits_exact_length_and_energy_budget() {
        let clip = sine(300.0, 4.0);
        let out = time_stretch(&clip, 2.0).unwrap();
        assert_eq!(out.len(), 88_200);
        let expected = clip.energy() * 0.5;
        let ratio_db = 10.0 * (out.energy() / expected).log10();
        assert!(ratio_db.abs() < 3.0, "energy off by {ratio_db} dB");
    }

    #[test]
    fn out_of_range_durations_are_rejected() {
        assert!(time_stretch(&sine(440.0, 0.2), 2.0).is_err());
        assert!(time_stretch(&sine(440.0, 16.5), 2.0).is_err());
    }
}
