//! On-disk corpus: JSONL manifests next to flat WAV directories.
//!
//! ```text
//! songs.jsonl        ingested songs
//! loops.jsonl        mined loops
//! derived.jsonl      manipulated loops
//! pairs.jsonl        positive pairs
//! negatives.jsonl    negative pairs
//! splits.json        song-level train / val / test assignment
//! features.jsonl     cached log-mel maps
//! state.json         stage fingerprints
//! audio/songs, audio/candidates, audio/loops, audio/derived, features, work
//! ```
//!
//! Every manifest is written to a temporary file and renamed into place.
//! Records are sorted by id so that equal content gives equal bytes.

mod experiment;
mod ingest;
mod pipeline;
mod records;
mod split;
mod validate;

pub use experiment::{evaluate_corpus, load_feature, rank_pool, resolve_pool, train_from_corpus, EvalTask, ScorerChoice};
pub use ingest::{ingest, IngestEntry};
pub use pipeline::{
    run_dedup, run_extract, run_featurize, run_negatives, run_pairs, run_pipeline, run_split, PipelineConfig, Stage,
    StageOutcome,
};
pub use records::{FeatureRecord, LoopRecord, SongRecord, SplitAssignment};
pub use split::split_songs;
pub use validate::validate;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::audio::{wav, AudioClip};
use crate::error::{Error, Result};
use crate::refine::LoopPair;

pub const SONGS: &str = "songs.jsonl";
pub const LOOPS: &str = "loops.jsonl";
pub const PAIRS: &str = "pairs.jsonl";
pub const NEGATIVES: &str = "negatives.jsonl";
pub const SPLITS: &str = "splits.json";
pub const FEATURES: &str = "features.jsonl";
pub const STATE: &str = "state.json";
/// Manipulated loops, written by the negatives stage.
pub const DERIVED: &str = "derived.jsonl";

/// Ids become file names, so they are limited to a safe alphabet.
pub fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("id {id:?} may only use letters, digits, '-', '_' and '.'")))
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` beside `path` and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn to_jsonl<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    out
}

/// Missing files read as empty.
pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = String::from_utf8(read_bytes(path)?).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read_bytes(path)?).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// A corpus directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    root: PathBuf,
}

impl Corpus {
    /// Creates the directory if needed.
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    /// Opens an ingested corpus.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.join(SONGS).exists() {
            return Err(Error::invalid(format!("{} is not an ingested corpus (no {SONGS})", root.display())));
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute path of a corpus-relative path.
    pub fn path(&self, relative: impl AsRef<Path>) -> PathBuf {
        self.root.join(relative)
    }

    pub fn songs(&self) -> Result<Vec<SongRecord>> {
        read_jsonl(&self.path(SONGS))
    }

    /// Mined loops followed by manipulated ones, each sorted by id.
    pub fn loops(&self) -> Result<Vec<LoopRecord>> {
        let mut loops: Vec<LoopRecord> = read_jsonl(&self.path(LOOPS))?;
        loops.extend(read_jsonl::<LoopRecord>(&self.path(DERIVED))?);
        Ok(loops)
    }

    pub fn mined_loops(&self) -> Result<Vec<LoopRecord>> {
        read_jsonl(&self.path(LOOPS))
    }

    pub fn pairs(&self) -> Result<Vec<LoopPair>> {
        read_jsonl(&self.path(PAIRS))
    }

    pub fn negatives(&self) -> Result<Vec<LoopPair>> {
        read_jsonl(&self.path(NEGATIVES))
    }

    pub fn features(&self) -> Result<Vec<FeatureRecord>> {
        read_jsonl(&self.path(FEATURES))
    }

    pub fn splits(&self) -> Result<Option<SplitAssignment>> {
        let path = self.path(SPLITS);
        if path.exists() {
            read_json(&path).map(Some)
        } else {
            Ok(None)
        }
    }

    /// The split, or an error asking for one.
    pub fn require_splits(&self) -> Result<SplitAssignment> {
        self.splits()?
            .ok_or_else(|| Error::InsufficientData("the corpus has no split yet; run split first".into()))
    }

    pub(crate) fn write_records<T: Serialize>(&self, name: &str, records: &[T]) -> Result<()> {
        write_atomic(&self.path(name), &to_jsonl(records))
    }

    pub(crate) fn write_splits(&self, splits: &SplitAssignment) -> Result<()> {
        write_json(&self.path(SPLITS), splits)
    }

    pub fn read_audio(&self, relative: &str) -> Result<AudioClip> {
        wav::read_wav(self.path(relative))
    }

    pub fn loop_audio(&self, record: &LoopRecord) -> Result<AudioClip> {
        self.read_audio(&record.audio_path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_file_name_safe() {
        assert!(check_id("song-01_a.b").is_ok());
        for bad in ["", "a/b", "..", ".hidden", "a b"] {
            assert!(check_id(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn jsonl_round_trips_and_missing_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        assert!(read_jsonl::<u32>(&path).unwrap().is_empty());
        write_atomic(&path, &to_jsonl(&[1u32, 2, 3])).unwrap();
        assert_eq!(read_jsonl::<u32>(&path).unwrap(), vec![1, 2, 3]);
        assert!(!dir.path().join("x.jsonl.tmp").exists());
        fs::write(&path, "1\nnope\n").unwrap();
        assert!(matches!(read_jsonl::<u32>(&path), Err(Error::Format { .. })));
    }
}
