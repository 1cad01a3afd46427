//! Song-level loop mining: bar grid, tensor, factorization, mixture
//! absorption, deduplication, layout refinement, positive pairs and rendered
//! loop audio.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, MelFilterbank, FEATURE_WINDOW, N_MELS};
use crate::error::{Error, Result};
use crate::extract::{
    best_instance, build_bar_grid, default_rank, extract_loop_audio, ntf_factorize, tensorize, BarGrid,
    LoopLayout, NtfModel, DEFAULT_ITERATIONS, FRAMES_PER_BAR,
};
use crate::refine::{
    absorb_redundant, average_hash, dedup_loops, Absorption, derive_pairs, refine_layout, DedupCandidate, LoopPair, SpectrogramHash,
    ACTIVE_THRESHOLD,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub beats_per_bar: usize,
    /// Loop templates; `None` picks `min(8, bars / 2)`.
    pub rank: Option<usize>,
    pub iterations: usize,
    pub seed: u64,
    pub threshold: f64,
    /// Keep only this many loops (by total activation) after deduplication.
    pub max_loops: Option<usize>,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            beats_per_bar: 4,
            rank: None,
            iterations: DEFAULT_ITERATIONS,
            seed: 0,
            threshold: ACTIVE_THRESHOLD,
            max_loops: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MinedLoop {
    pub loop_id: String,
    /// Row of the loop in the factorization.
    pub component: usize,
    pub source_bar: usize,
    pub activation_total: f64,
    pub hash: SpectrogramHash,
    /// Reconstructed spectrogram, frames per bar × mel bins.
    pub spectrogram: Array2<f64>,
    pub audio: AudioClip,
}

#[derive(Debug, Clone)]
pub struct SongMining {
    pub grid: BarGrid,
    pub model: NtfModel,
    /// Surviving loops in ascending component order.
    pub loops: Vec<MinedLoop>,
    pub merge_map: BTreeMap<usize, usize>,
    /// Refined layout, one row per surviving loop.
    pub layout: LoopLayout,
    pub pairs: Vec<LoopPair>,
}

pub fn loop_id(song_id: &str, component: usize) -> String {
    format!("{song_id}-l{component:02}")
}

/// One factorization component before deduplication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopCandidate {
    pub component: usize,
    pub loop_id: String,
    pub activation_total: f64,
    pub hash: SpectrogramHash,
    /// Bar of the strongest instance; `None` for silent components.
    pub source_bar: Option<usize>,
    /// Components this one was absorbed into as a mixture of them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub absorbed_into: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SongFactorization {
    pub grid: BarGrid,
    pub model: NtfModel,
    /// Layout weighted by template loudness, one row per component. Rows of
    /// absorbed components are zero.
    pub weighted: LoopLayout,
    pub candidates: Vec<LoopCandidate>,
    pub spectrograms: Vec<Array2<f64>>,
}

impl SongFactorization {
    /// Audio of one active component.
    pub fn render(&self, clip: &AudioClip, component: usize) -> Result<AudioClip> {
        extract_loop_audio(clip, &self.grid, &self.model, component)
    }
}

/// Deduplicated loops of one song and their refined layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSelection {
    /// Surviving components, ascending.
    pub kept: Vec<usize>,
    pub merge_map: BTreeMap<usize, usize>,
    /// One row per kept component.
    pub layout: LoopLayout,
}

/// Bar grid, factorization and one candidate per component.
pub fn factorize_song(
    song_id: &str,
    clip: &AudioClip,
    bpm_hint: Option<f64>,
    config: &MiningConfig,
) -> Result<SongFactorization> {
    let grid = build_bar_grid(clip, bpm_hint, config.beats_per_bar)?;
    let tensor = tensorize(clip, &grid, FRAMES_PER_BAR)?;
    let rank = config.rank.unwrap_or_else(|| default_rank(tensor.bars()));
    let model = ntf_factorize(&tensor, rank, config.iterations, config.seed)?;

    let filterbank = MelFilterbank::new(clip.sample_rate(), FEATURE_WINDOW, N_MELS);
    let gains = ndarray::ArrayView1::from(filterbank.band_gains());
    let spectrograms = (0..rank)
        .map(|l| model.loop_spectrogram(l))
        .collect::<Result<Vec<_>>>()?;
    let masses: Vec<f64> = spectrograms.iter().map(|s| s.dot(&gains).sum()).collect();
    let Absorption { layout: weighted, absorbed } =
        absorb_redundant(&spectrograms, &masses, &model.weighted_layout(filterbank.band_gains())?)?;
    let candidates = spectrograms
        .iter()
        .enumerate()
        .map(|(l, spec)| {
            let activation_total = weighted.row_total(l);
            Ok(LoopCandidate {
                component: l,
                loop_id: loop_id(song_id, l),
                activation_total,
                hash: average_hash(spec.view())?,
                source_bar: if activation_total > 0.0 {
                    Some(best_instance(&model, l)?)
                } else {
                    None
                },
                absorbed_into: absorbed.get(&l).map_or_else(Vec::new, |s| s.iter().map(|&(j, _)| j).collect()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SongFactorization {
        grid,
        model,
        weighted,
        candidates,
        spectrograms,
    })
}

/// Deduplicates the candidates, drops silent and absorbed ones, applies the loop cap and
/// refines the layout over the survivors.
pub fn select_loops(candidates: &[LoopCandidate], weighted: &LoopLayout, max_loops: Option<usize>) -> Result<LoopSelection> {
    let rank = weighted.loops();
    if candidates.len() != rank || candidates.iter().enumerate().any(|(i, c)| c.component != i) {
        return Err(Error::invalid(format!(
            "{} candidates do not match a layout of {rank} components",
            candidates.len()
        )));
    }
    let dedup: Vec<DedupCandidate> = candidates
        .iter()
        .map(|c| DedupCandidate {
            hash: c.hash,
            activation_total: c.activation_total,
        })
        .collect();
    let mut outcome = dedup_loops(&dedup);
    // silent components carry no loop
    outcome.kept.retain(|&l| candidates[l].activation_total > 0.0);
    if let Some(cap) = max_loops {
        let mut by_activity = outcome.kept.clone();
        by_activity.sort_by(|&a, &b| {
            candidates[b]
                .activation_total
                .total_cmp(&candidates[a].activation_total)
                .then(a.cmp(&b))
        });
        by_activity.truncate(cap);
        by_activity.sort_unstable();
        outcome.kept = by_activity;
    }
    let dropped: Vec<usize> = (0..rank)
        .filter(|l| !outcome.kept.contains(l) && !outcome.merge_map.contains_key(l))
        .collect();

    // dropped rows are zeroed before refinement so they cannot raise a bar's maximum
    let mut source = weighted.clone();
    for &l in &dropped {
        source.activations.row_mut(l).fill(0.0);
    }
    let refined = refine_layout(&source, &outcome.merge_map)?;
    let survivors: Vec<usize> = (0..rank).filter(|l| !outcome.merge_map.contains_key(l)).collect();
    let rows: Vec<usize> = outcome
        .kept
        .iter()
        .map(|k| survivors.iter().position(|s| s == k).expect("kept loops survive the merge"))
        .collect();
    Ok(LoopSelection {
        kept: outcome.kept,
        merge_map: outcome.merge_map,
        layout: LoopLayout {
            activations: refined.activations.select(ndarray::Axis(0), &rows),
        },
    })
}

/// Positive pairs of the selected loops.
pub fn selection_pairs(song_id: &str, selection: &LoopSelection, threshold: f64) -> Result<Vec<LoopPair>> {
    let ids: Vec<String> = selection.kept.iter().map(|&l| loop_id(song_id, l)).collect();
    derive_pairs(&selection.layout, &ids, song_id, threshold)
}

/// Mines loops and positive pairs from one song.
pub fn mine_song(song_id: &str, clip: &AudioClip, bpm_hint: Option<f64>, config: &MiningConfig) -> Result<SongMining> {
    let fact = factorize_song(song_id, clip, bpm_hint, config)?;
    let selection = select_loops(&fact.candidates, &fact.weighted, config.max_loops)?;
    let pairs = selection_pairs(song_id, &selection, config.threshold)?;
    let loops = selection
        .kept
        .iter()
        .map(|&l| {
            let c = &fact.candidates[l];
            Ok(MinedLoop {
                loop_id: c.loop_id.clone(),
                component: l,
                source_bar: c.source_bar.ok_or(Error::NoInstance(l))?,
                activation_total: c.activation_total,
                hash: c.hash,
                spectrogram: fact.spectrograms[l].clone(),
                audio: fact.render(clip, l)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SongMining {
        grid: fact.grid,
        model: fact.model,
        loops,
        merge_map: selection.merge_map,
        layout: selection.layout,
        pairs,
    })
}
