//! From-scratch neural networks for loop compatibility: layers with manual
//! backward passes, the shared skeleton, a pair classifier, an embedding
//! network, losses, SGD training and checkpoints.

pub mod checkpoint;
pub mod features;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod net;
pub mod train;

pub use checkpoint::{history_csv, EpochLog, ModelCheckpoint, TrainConfig};
pub use features::{loop_features, mix_features, Standardizer};
pub use layers::{Layer, Mode};
pub use loss::{bce_loss, contrastive_loss, sigmoid};
pub use net::{ModelKind, Network, SkeletonShape};
pub use train::{input_mode, snn_distance, train, InputMode, Model, PairSample, TrainingData};
