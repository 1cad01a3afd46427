use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::LoopLayout;

/// Activation at or above which a loop counts as playing in a bar.
pub const ACTIVE_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn as_target(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => 0.0,
        }
    }
}

/// How a pair was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Original,
    Random,
    Selected,
    Reverse,
    Shift,
    Rearrange,
}

impl Strategy {
    pub const NEGATIVE: [Strategy; 5] = [
        Strategy::Random,
        Strategy::Selected,
        Strategy::Reverse,
        Strategy::Shift,
        Strategy::Rearrange,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Original => "original",
            Strategy::Random => "random",
            Strategy::Selected => "selected",
            Strategy::Reverse => "reverse",
            Strategy::Shift => "shift",
            Strategy::Rearrange => "rearrange",
        }
    }

    /// Manipulates one loop of a positive pair rather than drawing across songs.
    pub fn is_within_song(self) -> bool {
        matches!(self, Strategy::Reverse | Strategy::Shift | Strategy::Rearrange)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Strategy::Original]
            .into_iter()
            .chain(Strategy::NEGATIVE)
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy '{s}'")))
    }
}

/// A labeled pair of loops, one JSONL record in the pair files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopPair {
    pub pair_id: String,
    pub loop_a: String,
    pub loop_b: String,
    pub label: Label,
    pub strategy: Strategy,
    pub song_id: String,
    /// Song of `loop_b` when it differs from `song_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub song_b: Option<String>,
    /// Number of bars in which a positive pair co-occurs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bar_count: Option<usize>,
}

impl LoopPair {
    pub fn positive(song_id: &str, a: &str, b: &str, bar_count: usize) -> Self {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        LoopPair {
            pair_id: format!("pos:{a}:{b}"),
            loop_a: a.to_string(),
            loop_b: b.to_string(),
            label: Label::Positive,
            strategy: Strategy::Original,
            song_id: song_id.to_string(),
            song_b: None,
            bar_count: Some(bar_count),
        }
    }

    pub fn negative(strategy: Strategy, a: &str, b: &str, song_id: &str, song_b: Option<&str>) -> Self {
        LoopPair {
            pair_id: format!("neg:{strategy}:{a}:{b}"),
            loop_a: a.to_string(),
            loop_b: b.to_string(),
            label: Label::Negative,
            strategy,
            song_id: song_id.to_string(),
            song_b: song_b.map(str::to_string),
            bar_count: None,
        }
    }
}

/// Positive pairs from a normalized layout: every two loops at or above
/// `threshold` in the same bar, collapsed across bars and sorted by id.
pub fn derive_pairs(
    layout: &LoopLayout,
    loop_ids: &[String],
    song_id: &str,
    threshold: f64,
) -> Result<Vec<LoopPair>> {
    if loop_ids.len() != layout.loops() {
        return Err(Error::invalid(format!(
            "{} loop ids for a layout with {} loops",
            loop_ids.len(),
            layout.loops()
        )));
    }
    let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for column in layout.activations.columns() {
        let active: Vec<&str> = column
            .iter()
            .zip(loop_ids)
            .filter(|(&a, _)| a >= threshold)
            .map(|(_, id)| id.as_str())
            .collect();
        for i in 0..active.len() {
            for j in i + 1..active.len() {
                let key = if active[i] <= active[j] {
                    (active[i], active[j])
                } else {
                    (active[j], active[i])
                };
                *counts.entry(key).or_default() += 1;
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|((a, b), n)| LoopPair::positive(song_id, a, b, n))
        .collect())
}
