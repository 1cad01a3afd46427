use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::negatives::Manipulation;
use crate::refine::SpectrogramHash;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongRecord {
    pub song_id: String,
    /// Canonical copy, relative to the corpus root.
    pub audio_path: String,
    /// Audio path as written in the ingest manifest; the file is never modified.
    pub source_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bpm_hint: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub license_tag: Option<String>,
    /// SHA-256 of the canonical WAV.
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopRecord {
    pub loop_id: String,
    pub song_id: String,
    pub audio_path: String,
    /// Seconds.
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_bar: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation_total: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash: Option<SpectrogramHash>,
    /// Source loop of a manipulated copy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived_from: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manipulation: Option<Manipulation>,
}

impl LoopRecord {
    pub fn is_mined(&self) -> bool {
        self.derived_from.is_none()
    }
}

/// Cached log-mel map stored as little-endian f64, frames × bins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub loop_id: String,
    pub path: String,
    pub frames: usize,
    pub bins: usize,
    /// Mel filter normalization the map was computed with.
    pub mel_norm: String,
}

/// Song-level split. Test songs contribute one pair each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SplitAssignment {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub test_pairs: Vec<String>,
}

impl SplitAssignment {
    pub fn train_set(&self) -> BTreeSet<&str> {
        self.train.iter().map(String::as_str).collect()
    }

    pub fn val_set(&self) -> BTreeSet<&str> {
        self.val.iter().map(String::as_str).collect()
    }

    pub fn test_set(&self) -> BTreeSet<&str> {
        self.test.iter().map(String::as_str).collect()
    }

    /// "train", "val", "test" or `None` for songs outside the split.
    pub fn split_of(&self, song_id: &str) -> Option<&'static str> {
        let has = |v: &[String]| v.iter().any(|s| s == song_id);
        if has(&self.train) {
            Some("train")
        } else if has(&self.val) {
            Some("val")
        } else if has(&self.test) {
            Some("test")
        } else {
            None
        }
    }
}
