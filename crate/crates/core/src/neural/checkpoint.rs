//! Model checkpoints and their binary file format.
//!
//! Layout: the magic `LCKP`, a little-endian `u32` format version, a `u64`
//! header length, a JSON header, then every tensor as little-endian `f64`
//! values in header order. The header carries the model kind, skeleton
//! shape, training configuration, standardization statistics, the metric
//! history and each tensor's name and shape. Floats survive a round trip
//! bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::features::Standardizer;
use super::net::{ModelKind, Network, SkeletonShape};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Recorded for provenance; the sampler that built the negatives.
    pub negative_strategy: String,
    pub margin: f64,
    /// Pair classifier input as two stacked channels instead of one mix.
    pub channel_stack: bool,
    /// Stop once the validation metric reaches this value.
    pub target_val_metric: Option<f64>,
    pub shape: SkeletonShape,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            batch_size: 128,
            epochs: 20,
            seed: 0,
            negative_strategy: "random".into(),
            margin: super::loss::DEFAULT_MARGIN,
            channel_stack: false,
            target_val_metric: None,
            shape: SkeletonShape::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Validation accuracy: thresholded at 0.5 for the classifier and at half
    /// the margin for embedding distances.
    pub val_metric: f64,
}

/// Training log as CSV with a header row.
pub fn history_csv(history: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_metric\n");
    for e in history {
        out.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.val_metric));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub kind: ModelKind,
    pub config: TrainConfig,
    pub standardizer: Standardizer,
    pub history: Vec<EpochLog>,
    /// Epoch whose parameters are stored; 0 means the initialization.
    pub best_epoch: usize,
    pub tensors: BTreeMap<String, ArrayD<f64>>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    config: TrainConfig,
    standardizer: Standardizer,
    history: Vec<EpochLog>,
    best_epoch: usize,
    tensors: Vec<TensorEntry>,
}

fn format_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

impl ModelCheckpoint {
    /// Freshly initialized network with identity standardization.
    pub fn untrained(kind: ModelKind, config: TrainConfig) -> Result<Self> {
        let mut net = Network::new(kind, config.shape.clone(), config.seed)?;
        Ok(Self {
            kind,
            standardizer: Standardizer::identity(config.shape.width),
            config,
            history: Vec::new(),
            best_epoch: 0,
            tensors: net.state(),
        })
    }

    pub fn shape(&self) -> &SkeletonShape {
        &self.config.shape
    }

    /// Rebuilds the network and loads the stored tensors into it.
    pub fn network(&self) -> Result<Network> {
        let mut net = Network::new(self.kind, self.config.shape.clone(), self.config.seed)?;
        net.load_state(&self.tensors)?;
        Ok(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind,
            config: self.config.clone(),
            standardizer: self.standardizer.clone(),
            history: self.history.clone(),
            best_epoch: self.best_epoch,
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let values: usize = self.tensors.values().map(|t| t.len()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + 8 * values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors.values() {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses bytes written by [`ModelCheckpoint::to_bytes`]; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(format_error(path, "not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(format_error(path, format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(header_len))
            .ok_or_else(|| format_error(path, "truncated header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| format_error(path, format!("bad header: {e}")))?;
        let mut offset = 16 + header_len;
        let mut tensors = BTreeMap::new();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let blob = bytes
                .get(offset..offset + 8 * n)
                .ok_or_else(|| format_error(path, format!("tensor {} is truncated", entry.name)))?;
            let values = blob
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = ArrayD::from_shape_vec(IxDyn(&entry.shape), values).expect("length checked");
            tensors.insert(entry.name, t);
            offset += 8 * n;
        }
        if offset != bytes.len() {
            return Err(format_error(path, "trailing bytes after the last tensor"));
        }
        Ok(Self {
            kind: header.kind,
            config: header.config,
            standardizer: header.standardizer,
            history: header.history,
            best_epoch: header.best_epoch,
            tensors,
        })
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelCheckpoint {
        let shape = SkeletonShape {
            in_channels: 1,
            height: 8,
            width: 8,
            conv_filters: [2, 2],
            kernel: 3,
            fc_features: [4, 3, 2],
            dropout: 0.1,
        };
        let config = TrainConfig {
            lr: 0.1 + 0.2,
            shape: shape.clone(),
            ..TrainConfig::default()
        };
        let mut net = Network::new(ModelKind::Cnn, shape, 0).unwrap();
        ModelCheckpoint {
            kind: ModelKind::Cnn,
            config,
            standardizer: Standardizer {
                mean: vec![1.0 / 3.0; 8],
                std: vec![std::f64::consts::PI; 8],
            },
            history: vec![EpochLog {
                epoch: 1,
                train_loss: 0.693147,
                val_loss: 1e-300,
                val_metric: 0.5,
            }],
            best_epoch: 1,
            tensors: net.state(),
        }
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let ck = sample();
        let back = ModelCheckpoint::from_bytes(&ck.to_bytes(), Path::new("x")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), ck.to_bytes());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(ModelCheckpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes();
        let p = Path::new("x");
        assert!(ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 1], p).is_err());
        assert!(ModelCheckpoint::from_bytes(b"nope", p).is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert!(ModelCheckpoint::from_bytes(&wrong_version, p).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let csv = history_csv(&sample().history);
        assert_eq!(csv.lines().next(), Some("epoch,train_loss,val_loss,val_metric"));
        assert_eq!(csv.lines().count(), 2);
    }
}
