use ndarray::{Array2, Array3};

use super::grid::BarGrid;
use super::ntf::NtfModel;
use super::tensor::{grid_position, interpolate_row};
use crate::audio::{
    istft, stft_complex, time_stretch, AudioClip, MelFilterbank, WindowKind, FEATURE_HOP,
    FEATURE_WINDOW, LOOP_SECONDS,
};
use crate::error::{Error, Result};

/// Lower bound applied to every soft mask.
pub const MASK_FLOOR: f64 = 1e-3;

/// Spectrogram of one loop, frames per bar × mel bins.
pub fn reconstruct_loop_spectrogram(model: &NtfModel, loop_index: usize) -> Result<Array2<f64>> {
    model.loop_spectrogram(loop_index)
}

/// Bar with the largest activation for `loop_index`.
pub fn best_instance(model: &NtfModel, loop_index: usize) -> Result<usize> {
    if loop_index >= model.rank() {
        return Err(Error::invalid(format!("loop index {loop_index} out of range")));
    }
    let row = model.layout.activations.row(loop_index);
    let (bar, &peak) = row
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .ok_or(Error::NoInstance(loop_index))?;
    if peak <= 0.0 {
        return Err(Error::NoInstance(loop_index));
    }
    Ok(bar)
}

/// Unfloored soft masks for every loop in `bar`, shaped loops × frames × bins
/// for a spectrogram of `frames` frames and `bins` linear bins. At each bin the
/// masks sum to one; bins no loop reaches get an even share.
pub fn soft_masks(
    model: &NtfModel,
    bar: usize,
    frames: usize,
    filterbank: &MelFilterbank,
) -> Result<Array3<f64>> {
    let loops = model.rank();
    if bar >= model.layout.bars() {
        return Err(Error::invalid(format!("bar {bar} out of range")));
    }
    let bins = filterbank.weights.ncols();
    let n_mels = filterbank.n_mels();
    let grid_frames = model.rhythm_templates.ncols();
    let spectra = (0..loops)
        .map(|l| model.loop_spectrogram(l))
        .collect::<Result<Vec<_>>>()?;
    if spectra.first().is_some_and(|s| s.ncols() != n_mels) {
        return Err(Error::invalid("filterbank does not match the model's mel bins"));
    }

    let mut masks = Array3::zeros((loops, frames, bins));
    let mut mel_row = vec![0.0; n_mels];
    let mut contrib = Array2::<f64>::zeros((loops, bins));
    for t in 0..frames {
        let pos = grid_position(t, frames, grid_frames);
        for (l, spec) in spectra.iter().enumerate() {
            interpolate_row(spec.view(), pos, &mut mel_row);
            let gain = model.layout.activations[[l, bar]];
            let lin = filterbank.weights.t().dot(&ndarray::ArrayView1::from(&mel_row[..]));
            contrib.row_mut(l).assign(&(lin * gain));
        }
        for f in 0..bins {
            let total: f64 = (0..loops).map(|l| contrib[[l, f]]).sum();
            for l in 0..loops {
                masks[[l, t, f]] = if total > 0.0 {
                    contrib[[l, f]] / total
                } else {
                    1.0 / loops as f64
                };
            }
        }
    }
    Ok(masks)
}

/// Renders one loop: takes its most active bar, applies a floored soft mask
/// in the STFT domain and stretches the result to two seconds.
pub fn extract_loop_audio(
    clip: &AudioClip,
    grid: &BarGrid,
    model: &NtfModel,
    loop_index: usize,
) -> Result<AudioClip> {
    let bar = best_instance(model, loop_index)?;
    if bar >= grid.bar_count {
        return Err(Error::invalid("layout has more bars than the grid"));
    }
    let (start, end) = grid.bar_range(bar, clip.sample_rate());
    let excerpt = clip.slice(start, end);
    let mut spec = stft_complex(&excerpt, FEATURE_WINDOW, FEATURE_HOP, WindowKind::Hann)?;
    let filterbank = MelFilterbank::new(clip.sample_rate(), FEATURE_WINDOW, model.sound_templates.ncols());
    let masks = soft_masks(model, bar, spec.values.nrows(), &filterbank)?;
    let mask = masks.index_axis(ndarray::Axis(0), loop_index);
    spec.values
        .zip_mut_with(&mask, |v, &m| *v *= m.max(MASK_FLOOR));
    let separated = istft(&spec, excerpt.len())?;
    time_stretch(&separated, LOOP_SECONDS)
}
