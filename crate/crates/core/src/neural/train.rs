//! Minibatch SGD training and checkpoint inference.

use ndarray::{Array2, ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{EpochLog, ModelCheckpoint, TrainConfig};
use super::features::{loop_features, mix_features, Standardizer};
use super::layers::Mode;
use super::loss::{bce_with_logit, contrastive_grad, contrastive_loss, euclidean, sigmoid};
use super::net::{batch_from_maps, ModelKind, Network};
use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// How a pair becomes network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    /// One map of the summed waveforms.
    Mix,
    /// The two loop maps as two channels.
    Stack,
    /// Each loop through the shared network separately.
    Separate,
}

pub fn input_mode(kind: ModelKind, channel_stack: bool) -> InputMode {
    match (kind, channel_stack) {
        (ModelKind::Snn, _) => InputMode::Separate,
        (ModelKind::Cnn, false) => InputMode::Mix,
        (ModelKind::Cnn, true) => InputMode::Stack,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSample {
    pub a: usize,
    pub b: usize,
    /// 1 for compatible, 0 for incompatible.
    pub label: f64,
}

/// Feature maps and the pairs that index them. In [`InputMode::Mix`] each
/// pair has its own map at `maps[a]` and `b` is ignored.
#[derive(Debug, Clone, Default)]
pub struct TrainingData {
    pub maps: Vec<Array2<f64>>,
    pub train: Vec<PairSample>,
    pub val: Vec<PairSample>,
}

impl TrainingData {
    /// Computes the maps needed by `mode` from canonical loop clips; pairs are
    /// `(first clip, second clip, label)`.
    pub fn from_clips(
        mode: InputMode,
        clips: &[AudioClip],
        train: &[(usize, usize, f64)],
        val: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let check = |&(a, b, _): &(usize, usize, f64)| {
            if a < clips.len() && b < clips.len() {
                Ok(())
            } else {
                Err(Error::invalid(format!("pair ({a}, {b}) indexes past {} clips", clips.len())))
            }
        };
        train.iter().chain(val).try_for_each(check)?;
        match mode {
            InputMode::Mix => {
                let mut maps = Vec::with_capacity(train.len() + val.len());
                let mut to_samples = |pairs: &[(usize, usize, f64)]| -> Result<Vec<PairSample>> {
                    pairs
                        .iter()
                        .map(|&(a, b, label)| {
                            maps.push(mix_features(&clips[a], &clips[b])?);
                            let i = maps.len() - 1;
                            Ok(PairSample { a: i, b: i, label })
                        })
                        .collect()
                };
                let train = to_samples(train)?;
                let val = to_samples(val)?;
                Ok(Self { maps, train, val })
            }
            InputMode::Stack | InputMode::Separate => {
                let maps = clips.iter().map(loop_features).collect::<Result<Vec<_>>>()?;
                let to_samples =
                    |pairs: &[(usize, usize, f64)]| pairs.iter().map(|&(a, b, label)| PairSample { a, b, label }).collect();
                Ok(Self {
                    maps,
                    train: to_samples(train),
                    val: to_samples(val),
                })
            }
        }
    }
}

fn inputs_of(mode: InputMode, samples: &[PairSample]) -> Vec<usize> {
    match mode {
        InputMode::Mix => samples.iter().map(|s| s.a).collect(),
        _ => samples.iter().flat_map(|s| [s.a, s.b]).collect(),
    }
}

struct Batcher<'a> {
    mode: InputMode,
    maps: &'a [Array2<f64>],
}

impl Batcher<'_> {
    /// Classifier input, or for embeddings the first members followed by the second members.
    fn input(&self, samples: &[PairSample]) -> Result<ArrayD<f64>> {
        let pick = |i: usize| &self.maps[i];
        let maps: Vec<&Array2<f64>> = match self.mode {
            InputMode::Mix => samples.iter().map(|s| pick(s.a)).collect(),
            InputMode::Stack => samples.iter().flat_map(|s| [pick(s.a), pick(s.b)]).collect(),
            InputMode::Separate => samples.iter().map(|s| pick(s.a)).chain(samples.iter().map(|s| pick(s.b))).collect(),
        };
        let channels = if self.mode == InputMode::Stack { 2 } else { 1 };
        batch_from_maps(&maps, channels)
    }
}

struct BatchOutcome {
    loss: f64,
    correct: usize,
    grad: ArrayD<f64>,
}

fn classifier_outcome(logits: &ArrayD<f64>, samples: &[PairSample]) -> BatchOutcome {
    let n = samples.len() as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    let mut grad = ArrayD::zeros(IxDyn(&[samples.len(), 1]));
    for (i, s) in samples.iter().enumerate() {
        let z = logits[[i, 0]];
        let (l, g) = bce_with_logit(z, s.label);
        loss += l;
        grad[[i, 0]] = g / n;
        if (sigmoid(z) >= 0.5) == (s.label >= 0.5) {
            correct += 1;
        }
    }
    BatchOutcome {
        loss: loss / n,
        correct,
        grad,
    }
}

fn embedding_outcome(emb: &ArrayD<f64>, samples: &[PairSample], margin: f64) -> Result<BatchOutcome> {
    let b = samples.len();
    let dim = emb.shape()[1];
    let n = b as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    let mut grad = ArrayD::zeros(emb.raw_dim());
    for (i, s) in samples.iter().enumerate() {
        let ea: Vec<f64> = (0..dim).map(|k| emb[[i, k]]).collect();
        let eb: Vec<f64> = (0..dim).map(|k| emb[[b + i, k]]).collect();
        let d = euclidean(&ea, &eb)?;
        loss += contrastive_loss(d, s.label, margin)?;
        if (d < margin / 2.0) == (s.label >= 0.5) {
            correct += 1;
        }
        if d > 0.0 {
            let g = contrastive_grad(d, s.label, margin)? / n;
            for k in 0..dim {
                let u = (ea[k] - eb[k]) / d * g;
                grad[[i, k]] = u;
                grad[[b + i, k]] = -u;
            }
        }
    }
    Ok(BatchOutcome {
        loss: loss / n,
        correct,
        grad,
    })
}

fn outcome(kind: ModelKind, out: &ArrayD<f64>, samples: &[PairSample], margin: f64) -> Result<BatchOutcome> {
    match kind {
        ModelKind::Cnn => Ok(classifier_outcome(out, samples)),
        ModelKind::Snn => embedding_outcome(out, samples, margin),
    }
}

/// Mean loss and accuracy over `samples` in evaluation mode.
fn evaluate(net: &mut Network, batcher: &Batcher, samples: &[PairSample], config: &TrainConfig) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0;
    for chunk in samples.chunks(config.batch_size.max(1)) {
        let out = net.forward(batcher.input(chunk)?, Mode::Eval)?;
        let o = outcome(net.kind, &out, chunk, config.margin)?;
        loss += o.loss * chunk.len() as f64;
        correct += o.correct;
    }
    let n = samples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains a model and returns the checkpoint with the lowest validation loss
/// (the initialization when no epoch runs).
pub fn train(data: &TrainingData, kind: ModelKind, config: &TrainConfig) -> Result<ModelCheckpoint> {
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::InsufficientData(format!(
            "training needs train and validation pairs, got {} and {}",
            data.train.len(),
            data.val.len()
        )));
    }
    if config.batch_size == 0 || !(config.lr.is_finite() && config.lr > 0.0) {
        return Err(Error::invalid("batch size and learning rate must be positive"));
    }
    let mode = input_mode(kind, config.channel_stack);
    let mut config = config.clone();
    config.shape.in_channels = if mode == InputMode::Stack { 2 } else { 1 };
    for s in data.train.iter().chain(&data.val) {
        if s.a >= data.maps.len() || s.b >= data.maps.len() {
            return Err(Error::invalid(format!("pair ({}, {}) indexes past {} maps", s.a, s.b, data.maps.len())));
        }
    }

    let mut used = inputs_of(mode, &data.train);
    used.sort_unstable();
    used.dedup();
    let standardizer = Standardizer::fit(used.iter().map(|&i| &data.maps[i]))?;
    let maps = data.maps.iter().map(|m| standardizer.apply(m)).collect::<Result<Vec<_>>>()?;
    let batcher = Batcher { mode, maps: &maps };

    let mut net = Network::new(kind, config.shape.clone(), config.seed)?;
    let mut best_state = net.state();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(7);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let samples: Vec<PairSample> = chunk.iter().map(|&i| data.train[i]).collect();
            let out = net.forward(batcher.input(&samples)?, Mode::Train)?;
            let o = outcome(kind, &out, &samples, config.margin)?;
            if !o.loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            net.layers.zero_grad();
            net.backward(o.grad)?;
            net.layers.sgd_step(config.lr);
            total += o.loss * samples.len() as f64;
        }
        let train_loss = total / data.train.len() as f64;
        let (val_loss, val_metric) = evaluate(&mut net, &batcher, &data.val, &config)?;
        if !val_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        history.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            val_metric,
        });
        if val_loss < best_loss {
            best_loss = val_loss;
            best_epoch = epoch;
            best_state = net.state();
        }
        if config.target_val_metric.is_some_and(|t| val_metric >= t) {
            break;
        }
    }

    Ok(ModelCheckpoint {
        kind,
        config,
        standardizer,
        history,
        best_epoch,
        tensors: best_state,
    })
}

/// A loaded checkpoint ready for inference. Inference runs in evaluation
/// mode and depends only on the checkpoint and the input.
#[derive(Debug, Clone)]
pub struct Model {
    pub checkpoint: ModelCheckpoint,
    net: Network,
}

impl Model {
    pub fn new(checkpoint: ModelCheckpoint) -> Result<Self> {
        let net = checkpoint.network()?;
        Ok(Self { checkpoint, net })
    }

    pub fn kind(&self) -> ModelKind {
        self.checkpoint.kind
    }

    pub fn input_mode(&self) -> InputMode {
        input_mode(self.checkpoint.kind, self.checkpoint.config.channel_stack)
    }

    fn run(&mut self, maps: &[&Array2<f64>], channels: usize) -> Result<ArrayD<f64>> {
        let standardized = maps
            .iter()
            .map(|m| self.checkpoint.standardizer.apply(m))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Array2<f64>> = standardized.iter().collect();
        self.net.forward(batch_from_maps(&refs, channels)?, Mode::Eval)
    }

    fn require(&self, kind: ModelKind) -> Result<()> {
        if self.kind() == kind {
            Ok(())
        } else {
            Err(Error::invalid(format!("operation needs a {kind} checkpoint, got {}", self.kind())))
        }
    }

    /// Compatibility probabilities from raw classifier inputs: one mix map
    /// per pair, or two loop maps per pair when channels are stacked.
    pub fn classifier_probabilities(&mut self, maps: &[&Array2<f64>]) -> Result<Vec<f64>> {
        self.require(ModelKind::Cnn)?;
        let channels = if self.input_mode() == InputMode::Stack { 2 } else { 1 };
        let mut out = Vec::new();
        for chunk in maps.chunks(64 * channels) {
            let logits = self.run(chunk, channels)?;
            out.extend(logits.iter().map(|&z| sigmoid(z)));
        }
        Ok(out)
    }

    /// Probability that two canonical loops are compatible.
    pub fn cnn_score(&mut self, source: &AudioClip, target: &AudioClip) -> Result<f64> {
        self.require(ModelKind::Cnn)?;
        let maps = match self.input_mode() {
            InputMode::Stack => vec![loop_features(source)?, loop_features(target)?],
            _ => vec![mix_features(source, target)?],
        };
        let refs: Vec<&Array2<f64>> = maps.iter().collect();
        Ok(self.classifier_probabilities(&refs)?[0])
    }

    /// Embeddings of raw 173 × 128 log-mel maps.
    pub fn embed_maps(&mut self, maps: &[&Array2<f64>]) -> Result<Vec<Vec<f64>>> {
        self.require(ModelKind::Snn)?;
        let mut out = Vec::with_capacity(maps.len());
        for chunk in maps.chunks(64) {
            let emb = self.run(chunk, 1)?;
            out.extend(emb.outer_iter().map(|row| row.iter().copied().collect::<Vec<f64>>()));
        }
        Ok(out)
    }

    pub fn snn_embed(&mut self, mel: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(self.embed_maps(&[mel])?.remove(0))
    }

    pub fn embed_clip(&mut self, clip: &AudioClip) -> Result<Vec<f64>> {
        self.snn_embed(&loop_features(clip)?)
    }
}

/// Euclidean distance between two embeddings.
pub fn snn_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    euclidean(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::net::SkeletonShape;
    use rand::Rng;

    fn tiny_shape() -> SkeletonShape {
        SkeletonShape {
            in_channels: 1,
            height: 8,
            width: 8,
            conv_filters: [2, 2],
            kernel: 3,
            fc_features: [6, 5, 4],
            dropout: 0.1,
        }
    }

    // Two classes of 8 × 8 maps: bright top half versus bright bottom half.
    fn blob_data(n: usize, seed: u64) -> TrainingData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut maps = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let class = i % 2;
            maps.push(Array2::from_shape_fn((8, 8), |(r, _)| {
                let on = (r < 4) == (class == 0);
                (if on { 2.0 } else { 0.0 }) + rng.gen_range(-0.5..0.5)
            }));
            labels.push(class as f64);
        }
        let samples: Vec<PairSample> = (0..n).map(|i| PairSample { a: i, b: i, label: labels[i] }).collect();
        let split = n * 3 / 4;
        TrainingData {
            maps,
            train: samples[..split].to_vec(),
            val: samples[split..].to_vec(),
        }
    }

    fn config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            lr: 0.05,
            shape: tiny_shape(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_keeps_the_initialization() {
        let data = blob_data(16, 0);
        let ck = train(&data, ModelKind::Cnn, &config(0)).unwrap();
        let mut fresh = Network::new(ModelKind::Cnn, tiny_shape(), 0).unwrap();
        assert_eq!(ck.tensors, fresh.state());
        assert_eq!(ck.best_epoch, 0);
        assert!(ck.history.is_empty());
    }

    #[test]
    fn empty_sets_are_insufficient() {
        let mut data = blob_data(16, 0);
        data.val.clear();
        assert!(matches!(train(&data, ModelKind::Cnn, &config(1)), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let data = blob_data(32, 0);
        let cfg = TrainConfig { lr: 1e200, ..config(5) };
        assert!(matches!(train(&data, ModelKind::Cnn, &cfg), Err(Error::TrainingDiverged { .. })));
    }

    #[test]
    fn classifier_learns_separable_maps() {
        let data = blob_data(96, 1);
        let ck = train(&data, ModelKind::Cnn, &config(30)).unwrap();
        let last = ck.history.last().unwrap();
        assert!(last.val_metric >= 0.9, "{:?}", ck.history);
        assert!(ck.best_epoch > 0);
    }

    #[test]
    fn training_is_reproducible() {
        let data = blob_data(32, 2);
        let a = train(&data, ModelKind::Snn, &config(3)).unwrap();
        let b = train(&data, ModelKind::Snn, &config(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 3);
    }

    #[test]
    fn early_stop_ends_training() {
        let data = blob_data(64, 3);
        let cfg = TrainConfig {
            target_val_metric: Some(0.0),
            ..config(10)
        };
        assert_eq!(train(&data, ModelKind::Cnn, &cfg).unwrap().history.len(), 1);
    }

    #[test]
    fn model_rejects_the_wrong_kind() {
        let data = blob_data(16, 0);
        let ck = train(&data, ModelKind::Snn, &config(0)).unwrap();
        let mut model = Model::new(ck).unwrap();
        let m = Array2::zeros((8, 8));
        assert!(model.classifier_probabilities(&[&m]).is_err());
        let e = model.snn_embed(&m).unwrap();
        assert_eq!(e.len(), 4);
        assert_eq!(snn_distance(&e, &e).unwrap(), 0.0);
    }
}
