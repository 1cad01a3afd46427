use ndarray::{Array2, Array3, ArrayView2};

use super::grid::BarGrid;
use crate::audio::{mel_energies, stft, AudioClip, FEATURE_HOP, FEATURE_WINDOW, N_MELS};
use crate::error::{Error, Result};

pub const FRAMES_PER_BAR: usize = 64;
pub const MIN_BARS: usize = 4;

/// bars × frames_per_bar × mel_bins, non-negative linear mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct SongTensor {
    pub values: Array3<f64>,
}

impl SongTensor {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tensor contains non-finite values"));
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("tensor contains negative values"));
        }
        Ok(Self { values })
    }

    pub fn bars(&self) -> usize {
        self.values.dim().0
    }

    pub fn frames_per_bar(&self) -> usize {
        self.values.dim().1
    }

    pub fn bins(&self) -> usize {
        self.values.dim().2
    }
}

/// Fractional position on a `target`-frame grid of frame `t` out of `source` frames;
/// first and last frames map onto the grid ends.
pub fn grid_position(t: usize, source: usize, target: usize) -> f64 {
    if source <= 1 {
        0.0
    } else {
        t as f64 * (target - 1) as f64 / (source - 1) as f64
    }
}

/// Samples row position `pos` of `m` by linear interpolation.
pub fn interpolate_row(m: ArrayView2<f64>, pos: f64, out: &mut [f64]) {
    let last = m.nrows() - 1;
    let i0 = (pos.floor() as usize).min(last);
    let i1 = (i0 + 1).min(last);
    let a = pos - i0 as f64;
    for (k, o) in out.iter_mut().enumerate() {
        *o = (1.0 - a) * m[[i0, k]] + a * m[[i1, k]];
    }
}

/// Resamples the rows of `m` onto `target` evenly spaced rows.
pub fn resample_rows(m: ArrayView2<f64>, target: usize) -> Array2<f64> {
    let mut out = Array2::zeros((target, m.ncols()));
    if m.nrows() == 0 {
        return out;
    }
    for j in 0..target {
        let pos = grid_position(j, target, m.nrows());
        let mut row = vec![0.0; m.ncols()];
        interpolate_row(m, pos, &mut row);
        out.row_mut(j).assign(&ndarray::Array1::from(row));
    }
    out
}

/// Pre-log mel energies of one bar, resampled to `frames_per_bar` rows.
pub fn bar_mel(bar: &AudioClip, frames_per_bar: usize) -> Result<Array2<f64>> {
    let spec = stft(bar, FEATURE_WINDOW, FEATURE_HOP)?;
    let mel = mel_energies(&spec, N_MELS)?;
    Ok(resample_rows(mel.view(), frames_per_bar))
}

/// Cuts the song into bars and stacks their mel energies. Each bar is
/// analysed on its own, so repeated bars give identical slices.
pub fn tensorize(clip: &AudioClip, grid: &BarGrid, frames_per_bar: usize) -> Result<SongTensor> {
    if grid.bar_count < MIN_BARS {
        return Err(Error::TooShort(format!(
            "{} bars, need at least {MIN_BARS}",
            grid.bar_count
        )));
    }
    if frames_per_bar < 2 {
        return Err(Error::invalid("frames per bar must be at least 2"));
    }
    let (_, last_end) = grid.bar_range(grid.bar_count - 1, clip.sample_rate());
    if last_end > clip.len() {
        return Err(Error::invalid("bar grid extends past the end of the clip"));
    }
    let mut values = Array3::zeros((grid.bar_count, frames_per_bar, N_MELS));
    for b in 0..grid.bar_count {
        let (start, end) = grid.bar_range(b, clip.sample_rate());
        let slice = bar_mel(&clip.slice(start, end), frames_per_bar)?;
        values.index_axis_mut(ndarray::Axis(0), b).assign(&slice);
    }
    SongTensor::new(values.mapv(|v: f64| v.max(0.0)))
}
