use serde::{Deserialize, Serialize};

use crate::audio::{stft_complex, AudioClip, WindowKind};
use crate::error::{Error, Result};

pub const MIN_BPM: f64 = 40.0;
pub const MAX_BPM: f64 = 240.0;
/// Shortest clip accepted for tempo estimation without a hint.
pub const MIN_ESTIMATION_SECS: f64 = 8.0;

const ONSET_FRAME: usize = 512;
const PRIOR_BPM: f64 = 120.0;

/// Steady-tempo bar grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarGrid {
    pub bpm: f64,
    /// Time of the first downbeat in seconds.
    pub downbeat_offset: f64,
    pub beats_per_bar: usize,
    pub bar_count: usize,
}

impl BarGrid {
    pub fn beat_seconds(&self) -> f64 {
        60.0 / self.bpm
    }

    pub fn bar_seconds(&self) -> f64 {
        self.beat_seconds() * self.beats_per_bar as f64
    }

    /// Sample range `[start, end)` of bar `index`; `end` may pass the clip end
    /// by the bar-count tolerance.
    pub fn bar_range(&self, index: usize, sample_rate: u32) -> (usize, usize) {
        let rate = sample_rate as f64;
        let start = (self.downbeat_offset + index as f64 * self.bar_seconds()) * rate;
        let end = (self.downbeat_offset + (index + 1) as f64 * self.bar_seconds()) * rate;
        (start.round() as usize, end.round() as usize)
    }

    /// Builds a grid for a known tempo and offset, fitting as many whole bars as the clip holds.
    pub fn fitted(bpm: f64, downbeat_offset: f64, beats_per_bar: usize, clip_secs: f64) -> Result<Self> {
        if !(MIN_BPM..=MAX_BPM).contains(&bpm) {
            return Err(Error::invalid(format!("bpm {bpm} outside [{MIN_BPM}, {MAX_BPM}]")));
        }
        if beats_per_bar == 0 {
            return Err(Error::invalid("beats per bar must be positive"));
        }
        let bar = 60.0 / bpm * beats_per_bar as f64;
        // a final bar may run up to 1 % past the end; tempo estimates are not exact
        let bar_count = ((clip_secs - downbeat_offset) / bar + 0.01).floor().max(0.0) as usize;
        Ok(Self {
            bpm,
            downbeat_offset,
            beats_per_bar,
            bar_count,
        })
    }
}

/// Half-wave rectified log-spectral flux of a centered Hann STFT (1024-sample
/// window, 512-sample hop). Frame `t` is centered on sample `512 t`; the clip
/// is treated as preceded by silence.
pub fn onset_envelope(clip: &AudioClip) -> Vec<f64> {
    if clip.is_empty() {
        return Vec::new();
    }
    // leading silence keeps reflect padding from mirroring an onset at sample 0
    let lead = 2 * ONSET_FRAME;
    let mut padded = vec![0.0f32; lead];
    padded.extend_from_slice(clip.samples());
    let padded = AudioClip::new(padded, clip.sample_rate()).expect("finite samples");
    let spec = stft_complex(&padded, 2 * ONSET_FRAME, ONSET_FRAME, WindowKind::Hann)
        .expect("non-empty clip with positive window");
    let mut prev = vec![0.0f64; spec.values.ncols()];
    spec.values
        .rows()
        .into_iter()
        .map(|row| {
            let mut flux = 0.0;
            for (p, v) in prev.iter_mut().zip(row) {
                let mag = (1.0 + 100.0 * v.norm()).ln();
                flux += (mag - *p).max(0.0);
                *p = mag;
            }
            flux
        })
        .skip(lead / ONSET_FRAME)
        .collect()
}

fn frames_per_second(sample_rate: u32) -> f64 {
    sample_rate as f64 / ONSET_FRAME as f64
}

fn estimate_period(env: &[f64], fps: f64) -> Result<f64> {
    let mean = env.iter().sum::<f64>() / env.len().max(1) as f64;
    let centered: Vec<f64> = env.iter().map(|v| v - mean).collect();
    let energy: f64 = centered.iter().map(|v| v * v).sum();
    if energy <= 1e-12 {
        return Err(Error::EstimationFailed("flat onset curve".into()));
    }
    let min_lag = (60.0 * fps / MAX_BPM).ceil() as usize;
    let max_lag = ((60.0 * fps / MIN_BPM).floor() as usize).min(env.len().saturating_sub(2));
    if min_lag + 1 >= max_lag {
        return Err(Error::EstimationFailed("clip too short for the tempo range".into()));
    }
    let ac = |lag: usize| -> f64 {
        centered[..centered.len() - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum()
    };
    // log-normal tempo prior around 120 BPM, one octave wide, damps octave errors
    let weighted = |lag: usize| -> f64 {
        let bpm = 60.0 * fps / lag as f64;
        ac(lag) * (-0.5 * (bpm / PRIOR_BPM).log2().powi(2)).exp()
    };
    let values: Vec<f64> = (min_lag - 1..=max_lag + 1).map(weighted).collect();
    let (best, &peak) = values[1..values.len() - 1]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("non-empty lag range");
    if peak <= 0.0 {
        return Err(Error::EstimationFailed("no periodicity in onset curve".into()));
    }
    let (l, c, r) = (values[best], values[best + 1], values[best + 2]);
    let denom = l - 2.0 * c + r;
    let shift = if denom.abs() > 1e-12 {
        (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Ok(refine_period(env, (min_lag + best) as f64 + shift))
}

fn interpolated(env: &[f64], pos: f64) -> f64 {
    let i = pos.floor() as usize;
    let a = pos - i as f64;
    let x0 = env.get(i).copied().unwrap_or(0.0);
    let x1 = env.get(i + 1).copied().unwrap_or(0.0);
    (1.0 - a) * x0 + a * x1
}

// Mean envelope value on the pulse train start, start + step, ...
fn fine_comb(env: &[f64], start: f64, step: f64) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    let mut pos = start;
    while pos < (env.len() - 1) as f64 {
        total += interpolated(env, pos);
        n += 1;
        pos += step;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Sharpens an autocorrelation period estimate by searching, within 3 %,
/// the period whose pulse train collects the most onset energy.
fn refine_period(env: &[f64], coarse: f64) -> f64 {
    let steps = 120;
    let mut best = (coarse, f64::NEG_INFINITY);
    for i in 0..=2 * steps {
        let period = coarse * (1.0 + 0.03 * (i as f64 - steps as f64) / steps as f64);
        let phases = (period * 4.0).ceil() as usize;
        let score = (0..phases)
            .map(|p| fine_comb(env, p as f64 * 0.25, period))
            .fold(f64::NEG_INFINITY, f64::max);
        if score > best.1 + 1e-12 {
            best = (period, score);
        }
    }
    best.0
}

/// Estimates (or accepts) tempo and aligns the first downbeat to onset energy.
pub fn build_bar_grid(clip: &AudioClip, bpm_hint: Option<f64>, beats_per_bar: usize) -> Result<BarGrid> {
    if beats_per_bar == 0 {
        return Err(Error::invalid("beats per bar must be positive"));
    }
    let fps = frames_per_second(clip.sample_rate());
    let env = onset_envelope(clip);
    let beat_frames = match bpm_hint {
        Some(bpm) => {
            if !(MIN_BPM..=MAX_BPM).contains(&bpm) {
                return Err(Error::invalid(format!("bpm hint {bpm} outside [{MIN_BPM}, {MAX_BPM}]")));
            }
            60.0 * fps / bpm
        }
        None => {
            if clip.duration() < MIN_ESTIMATION_SECS {
                return Err(Error::TooShort(format!(
                    "{:.2} s clip, tempo estimation needs {MIN_ESTIMATION_SECS} s",
                    clip.duration()
                )));
            }
            estimate_period(&env, fps)?
        }
    };
    let bpm = bpm_hint.unwrap_or(60.0 * fps / beat_frames);

    let mut offset_frames = 0.0;
    if env.iter().any(|&v| v > 0.0) {
        let bar_frames = beat_frames * beats_per_bar as f64;
        let steps = (beat_frames * 4.0).floor() as usize;
        let (mut beat_phase, _) = (0..steps)
            .map(|p| p as f64 * 0.25)
            .map(|p| (p, fine_comb(&env, p, beat_frames)))
            .fold((0.0, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best });
        if beat_phase > beat_frames - 0.5 {
            beat_phase = 0.0;
        }
        // earliest beat whose bar-rate pulse is within 10 % of the strongest
        let scores: Vec<f64> = (0..beats_per_bar)
            .map(|j| fine_comb(&env, beat_phase + j as f64 * beat_frames, bar_frames))
            .collect();
        let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let downbeat = scores.iter().position(|&v| v >= 0.9 * top).unwrap_or(0);
        offset_frames = beat_phase + downbeat as f64 * beat_frames;
    }
    let offset = offset_frames / fps;
    BarGrid::fitted(bpm.clamp(MIN_BPM, MAX_BPM), offset, beats_per_bar, clip.duration())
}
