//! Evaluation sets: a balanced classification set from validation pairs and
//! 100-candidate ranking tasks from held-out pairs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{RankingTask, CANDIDATES};
use crate::error::{Error, Result};
use crate::negatives::{
    build_negative_set, LoopRef, ManipulatedLoop, NegativeSet, SamplingConfig, StrategyChoice, BEATS_PER_LOOP,
};
use crate::refine::{Label, LoopPair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSetConfig {
    pub seed: u64,
    /// Draw ranking distractors from every loop instead of the test loops only.
    pub corpus_wide: bool,
}

impl Default for EvalSetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus_wide: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSets {
    /// Validation positives followed by as many negatives, split evenly over
    /// the five strategies.
    pub classification: Vec<LoopPair>,
    /// Manipulated loops the classification negatives refer to.
    pub manipulated: Vec<ManipulatedLoop>,
    pub ranking: Vec<RankingTask>,
}

/// Builds both evaluation sets; either input list may be empty, leaving its
/// set empty. Each held-out positive `(a, b)` becomes a
/// task with query `a`, target `b` and 99 distractors from other songs.
pub fn build_eval_sets(
    val_positives: &[LoopPair],
    test_positives: &[LoopPair],
    val_loops: &[LoopRef],
    test_loops: &[LoopRef],
    all_loops: &[LoopRef],
    eligible: &dyn Fn(&LoopRef) -> bool,
    config: &EvalSetConfig,
) -> Result<EvalSets> {
    let sampling = SamplingConfig {
        strategy: StrategyChoice::Equal,
        seed: config.seed,
        neg_pos_ratio: 1.0,
        beats_per_loop: BEATS_PER_LOOP,
    };
    let negatives = if val_positives.is_empty() {
        NegativeSet::default()
    } else {
        build_negative_set(val_positives, val_loops, &sampling, eligible)?
    };
    let mut classification: Vec<LoopPair> = val_positives.to_vec();
    for p in &mut classification {
        if p.label != Label::Positive {
            return Err(Error::invalid(format!("pair {} is not a positive", p.pair_id)));
        }
    }
    classification.extend(negatives.pairs);

    let pool = if config.corpus_wide { all_loops } else { test_loops };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(11);
    let mut ranking = Vec::with_capacity(test_positives.len());
    for pair in test_positives {
        let mut distractors: Vec<&str> = pool
            .iter()
            .filter(|l| l.song_id != pair.song_id && l.loop_id != pair.loop_a && l.loop_id != pair.loop_b)
            .map(|l| l.loop_id.as_str())
            .collect();
        distractors.sort_unstable();
        distractors.dedup();
        if distractors.len() < CANDIDATES - 1 {
            return Err(Error::InsufficientData(format!(
                "only {} distractors available for {}, need {}",
                distractors.len(),
                pair.loop_a,
                CANDIDATES - 1
            )));
        }
        let mut candidates: Vec<String> = distractors
            .choose_multiple(&mut rng, CANDIDATES - 1)
            .map(|s| s.to_string())
            .collect();
        candidates.insert(rng.gen_range(0..CANDIDATES), pair.loop_b.clone());
        ranking.push(RankingTask {
            query: pair.loop_a.clone(),
            candidates,
            target: pair.loop_b.clone(),
        });
    }
    Ok(EvalSets {
        classification,
        manipulated: negatives.manipulated,
        ranking,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refine::Strategy;

    fn positive(song: usize) -> LoopPair {
        LoopPair {
            pair_id: format!("s{song}-p0"),
            loop_a: format!("s{song}-a"),
            loop_b: format!("s{song}-b"),
            label: Label::Positive,
            strategy: Strategy::Original,
            song_id: format!("s{song}"),
            song_b: None,
            bar_count: Some(4),
        }
    }

    fn loops(songs: std::ops::Range<usize>) -> Vec<LoopRef> {
        songs
            .flat_map(|s| {
                ["a", "b"].map(|l| LoopRef {
                    loop_id: format!("s{s}-{l}"),
                    song_id: format!("s{s}"),
                })
            })
            .collect()
    }

    #[test]
    fn hundred_test_pairs_give_hundred_full_tasks() {
        let val: Vec<LoopPair> = (0..20).map(positive).collect();
        let test: Vec<LoopPair> = (100..200).map(positive).collect();
        let sets = build_eval_sets(
            &val,
            &test,
            &loops(0..20),
            &loops(100..200),
            &loops(0..200),
            &|_| true,
            &EvalSetConfig::default(),
        )
        .unwrap();
        assert_eq!(sets.ranking.len(), 100);
        for task in &sets.ranking {
            assert_eq!(task.candidates.len(), 100);
            assert_eq!(task.candidates.iter().filter(|c| **c == task.target).count(), 1);
            assert!(!task.candidates.contains(&task.query));
            task.target_index().unwrap();
        }
        let pos = sets.classification.iter().filter(|p| p.label == Label::Positive).count();
        assert_eq!(pos * 2, sets.classification.len());
        let mut per: std::collections::BTreeMap<Strategy, usize> = Default::default();
        for p in sets.classification.iter().filter(|p| p.label == Label::Negative) {
            *per.entry(p.strategy).or_default() += 1;
        }
        let (lo, hi) = (per.values().min().unwrap(), per.values().max().unwrap());
        assert!(hi - lo <= 1, "{per:?}");
    }

    #[test]
    fn small_pools_are_insufficient() {
        let val: Vec<LoopPair> = (0..5).map(positive).collect();
        let test: Vec<LoopPair> = (100..110).map(positive).collect();
        let err = build_eval_sets(
            &val,
            &test,
            &loops(0..5),
            &loops(100..110),
            &loops(0..110),
            &|_| true,
            &EvalSetConfig::default(),
        );
        assert!(matches!(err, Err(Error::InsufficientData(_))));
        let wide = build_eval_sets(
            &val,
            &test[..1],
            &loops(0..5),
            &loops(100..110),
            &loops(0..110),
            &|_| true,
            &EvalSetConfig {
                corpus_wide: true,
                ..EvalSetConfig::default()
            },
        )
        .unwrap();
        assert_eq!(wide.ranking[0].candidates.len(), 100);
    }
}
