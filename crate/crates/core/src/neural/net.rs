//! Sequential networks: the shared skeleton, the pair classifier and the
//! embedding network.

use std::collections::BTreeMap;

use ndarray::{ArrayD, IxDyn};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Conv2d, Dropout, Flatten, Layer, Linear, MaxPool2, Mode, PRelu, Param};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub enum AnyLayer {
    Conv(Conv2d),
    Linear(Linear),
    BatchNorm(BatchNorm),
    PRelu(PRelu),
    Dropout(Dropout),
    Pool(MaxPool2),
    Flatten(Flatten),
}

impl AnyLayer {
    fn inner(&mut self) -> &mut dyn Layer {
        match self {
            AnyLayer::Conv(l) => l,
            AnyLayer::Linear(l) => l,
            AnyLayer::BatchNorm(l) => l,
            AnyLayer::PRelu(l) => l,
            AnyLayer::Dropout(l) => l,
            AnyLayer::Pool(l) => l,
            AnyLayer::Flatten(l) => l,
        }
    }
}

impl Layer for AnyLayer {
    fn forward(&mut self, x: ArrayD<f64>, mode: Mode) -> Result<ArrayD<f64>> {
        self.inner().forward(x, mode)
    }

    fn backward(&mut self, dy: ArrayD<f64>) -> Result<ArrayD<f64>> {
        self.inner().backward(dy)
    }

    fn params(&mut self) -> Vec<(&'static str, &mut Param)> {
        self.inner().params()
    }

    fn buffers(&mut self) -> Vec<(&'static str, &mut ArrayD<f64>)> {
        self.inner().buffers()
    }
}

/// Named layers applied in order.
#[derive(Debug, Clone, Default)]
pub struct Sequential {
    pub layers: Vec<(String, AnyLayer)>,
}

impl Sequential {
    pub fn push(&mut self, name: impl Into<String>, layer: AnyLayer) {
        self.layers.push((name.into(), layer));
    }

    /// Parameters as `layer.param` names, in layer order.
    pub fn named_params(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        for (name, layer) in &mut self.layers {
            for (p, param) in layer.params() {
                out.push((format!("{name}.{p}"), param));
            }
        }
        out
    }

    pub fn named_buffers(&mut self) -> Vec<(String, &mut ArrayD<f64>)> {
        let mut out = Vec::new();
        for (name, layer) in &mut self.layers {
            for (b, buf) in layer.buffers() {
                out.push((format!("{name}.{b}"), buf));
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.named_params() {
            p.zero_grad();
        }
    }

    /// Plain gradient descent step.
    pub fn sgd_step(&mut self, lr: f64) {
        for (_, p) in self.named_params() {
            p.value.scaled_add(-lr, &p.grad);
        }
    }

    /// Every parameter and buffer by name.
    pub fn state(&mut self) -> BTreeMap<String, ArrayD<f64>> {
        let mut out: BTreeMap<String, ArrayD<f64>> =
            self.named_params().into_iter().map(|(n, p)| (n, p.value.clone())).collect();
        out.extend(self.named_buffers().into_iter().map(|(n, b)| (n, b.clone())));
        out
    }

    /// Loads a state produced by [`Sequential::state`]; names and shapes must match exactly.
    pub fn load_state(&mut self, state: &BTreeMap<String, ArrayD<f64>>) -> Result<()> {
        let mut seen = 0;
        let mut assign = |name: &str, target: &mut ArrayD<f64>| -> Result<()> {
            let src = state
                .get(name)
                .ok_or_else(|| Error::shape(format!("checkpoint lacks tensor {name}")))?;
            if src.shape() != target.shape() {
                return Err(Error::shape(format!(
                    "tensor {name} has shape {:?}, network expects {:?}",
                    src.shape(),
                    target.shape()
                )));
            }
            target.assign(src);
            seen += 1;
            Ok(())
        };
        for (name, p) in self.named_params() {
            assign(&name, &mut p.value)?;
        }
        for (name, b) in self.named_buffers() {
            assign(&name, b)?;
        }
        if seen != state.len() {
            return Err(Error::shape(format!(
                "checkpoint holds {} tensors, network has {seen}",
                state.len()
            )));
        }
        Ok(())
    }
}

impl Layer for Sequential {
    fn forward(&mut self, mut x: ArrayD<f64>, mode: Mode) -> Result<ArrayD<f64>> {
        for (_, layer) in &mut self.layers {
            x = layer.forward(x, mode)?;
        }
        Ok(x)
    }

    fn backward(&mut self, mut dy: ArrayD<f64>) -> Result<ArrayD<f64>> {
        for (_, layer) in self.layers.iter_mut().rev() {
            dy = layer.backward(dy)?;
        }
        Ok(dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Pair classifier: skeleton plus a one-unit output layer and sigmoid.
    Cnn,
    /// Embedding network compared by Euclidean distance.
    Snn,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Cnn => "cnn",
            ModelKind::Snn => "snn",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn" => Ok(ModelKind::Cnn),
            "snn" => Ok(ModelKind::Snn),
            other => Err(Error::invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Sizes of the skeleton. The default is the full-size network on
/// 173 × 128 log-mel input; tests build smaller ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonShape {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub conv_filters: [usize; 2],
    pub kernel: usize,
    pub fc_features: [usize; 3],
    pub dropout: f64,
}

impl Default for SkeletonShape {
    fn default() -> Self {
        Self {
            in_channels: 1,
            height: 173,
            width: 128,
            conv_filters: [16, 4],
            kernel: 3,
            fc_features: [256, 128, 16],
            dropout: 0.1,
        }
    }
}

impl SkeletonShape {
    /// Inputs to the first fully connected layer after two 2 × 2 pools.
    pub fn flat_features(&self) -> usize {
        self.conv_filters[1] * (self.height / 2 / 2) * (self.width / 2 / 2)
    }

    pub fn embedding_dim(&self) -> usize {
        self.fc_features[2]
    }
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// conv → BN → PReLU → dropout → pool (twice), flatten, then three
/// fc → BN → PReLU → dropout blocks.
pub fn build_skeleton(shape: &SkeletonShape, seed: u64) -> Result<Sequential> {
    if shape.height / 4 == 0 || shape.width / 4 == 0 || shape.in_channels == 0 || shape.kernel % 2 == 0 {
        return Err(Error::invalid(format!("unusable skeleton shape {shape:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Sequential::default();
    let mut channels = shape.in_channels;
    let mut block = 0u64;
    for (i, &filters) in shape.conv_filters.iter().enumerate() {
        let n = i + 1;
        let mut conv = Conv2d::new(channels, filters, shape.kernel, &mut rng);
        conv.skip_input_grad = i == 0;
        net.push(format!("conv{n}"), AnyLayer::Conv(conv));
        net.push(format!("bn{n}"), AnyLayer::BatchNorm(BatchNorm::new(filters)));
        net.push(format!("prelu{n}"), AnyLayer::PRelu(PRelu::new(filters)));
        block += 1;
        net.push(
            format!("drop{n}"),
            AnyLayer::Dropout(Dropout::new(shape.dropout, stream_seed(seed, block))),
        );
        net.push(format!("pool{n}"), AnyLayer::Pool(MaxPool2::new()));
        channels = filters;
    }
    net.push("flatten", AnyLayer::Flatten(Flatten::new()));
    let mut features = shape.flat_features();
    for (i, &out) in shape.fc_features.iter().enumerate() {
        let n = i + 1;
        net.push(format!("fc{n}"), AnyLayer::Linear(Linear::new(features, out, &mut rng)));
        net.push(format!("fc_bn{n}"), AnyLayer::BatchNorm(BatchNorm::new(out)));
        net.push(format!("fc_prelu{n}"), AnyLayer::PRelu(PRelu::new(out)));
        block += 1;
        net.push(
            format!("fc_drop{n}"),
            AnyLayer::Dropout(Dropout::new(shape.dropout, stream_seed(seed, block))),
        );
        features = out;
    }
    Ok(net)
}

/// Skeleton plus the output layer for the pair classifier.
#[derive(Debug, Clone)]
pub struct Network {
    pub kind: ModelKind,
    pub shape: SkeletonShape,
    pub layers: Sequential,
}

impl Network {
    pub fn new(kind: ModelKind, shape: SkeletonShape, seed: u64) -> Result<Self> {
        let mut layers = build_skeleton(&shape, seed)?;
        if kind == ModelKind::Cnn {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 99));
            layers.push("head", AnyLayer::Linear(Linear::new(shape.embedding_dim(), 1, &mut rng)));
        }
        Ok(Self { kind, shape, layers })
    }

    fn check_input(&self, x: &ArrayD<f64>) -> Result<()> {
        let s = &self.shape;
        if x.ndim() != 4 || x.shape()[1..] != [s.in_channels, s.height, s.width] || x.shape()[0] == 0 {
            return Err(Error::shape(format!(
                "network expects N × {} × {} × {} input, got {:?}",
                s.in_channels,
                s.height,
                s.width,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Embeddings (embedding network) or logits (pair classifier), one row per input.
    pub fn forward(&mut self, x: ArrayD<f64>, mode: Mode) -> Result<ArrayD<f64>> {
        self.check_input(&x)?;
        self.layers.forward(x, mode)
    }

    pub fn backward(&mut self, dy: ArrayD<f64>) -> Result<()> {
        self.layers.backward(dy).map(|_| ())
    }

    pub fn state(&mut self) -> BTreeMap<String, ArrayD<f64>> {
        self.layers.state()
    }

    pub fn load_state(&mut self, state: &BTreeMap<String, ArrayD<f64>>) -> Result<()> {
        self.layers.load_state(state)
    }
}

/// Stacks `H × W` feature maps into an `N × C × H × W` batch, `channels`
/// consecutive maps per sample.
pub fn batch_from_maps(maps: &[&ndarray::Array2<f64>], channels: usize) -> Result<ArrayD<f64>> {
    let first = maps.first().ok_or_else(|| Error::shape("empty batch"))?;
    let (h, w) = first.dim();
    if channels == 0 || maps.len() % channels != 0 {
        return Err(Error::shape(format!("{} maps do not split into {channels} channels", maps.len())));
    }
    let mut data = Vec::with_capacity(maps.len() * h * w);
    for m in maps {
        if m.dim() != (h, w) {
            return Err(Error::shape(format!("feature map {:?} differs from {:?}", m.dim(), (h, w))));
        }
        data.extend(m.iter());
    }
    ArrayD::from_shape_vec(IxDyn(&[maps.len() / channels, channels, h, w]), data)
        .map_err(|e| Error::shape(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn small() -> SkeletonShape {
        SkeletonShape {
            in_channels: 1,
            height: 9,
            width: 8,
            conv_filters: [3, 2],
            kernel: 3,
            fc_features: [6, 5, 4],
            dropout: 0.1,
        }
    }

    #[test]
    fn full_size_flatten_is_5504() {
        assert_eq!(SkeletonShape::default().flat_features(), 4 * 43 * 32);
    }

    #[test]
    fn layer_names_follow_the_block_order() {
        let net = Network::new(ModelKind::Cnn, small(), 0).unwrap();
        let names: Vec<&str> = net.layers.layers.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(&names[..6], &["conv1", "bn1", "prelu1", "drop1", "pool1", "conv2"]);
        assert_eq!(names.last(), Some(&"head"));
    }

    #[test]
    fn output_rows_match_batch() {
        let mut snn = Network::new(ModelKind::Snn, small(), 1).unwrap();
        let x = ArrayD::from_shape_fn(IxDyn(&[3, 1, 9, 8]), |i| (i[2] as f64 - i[3] as f64) * 0.1);
        assert_eq!(snn.forward(x.clone(), Mode::Eval).unwrap().shape(), &[3, 4]);
        let mut cnn = Network::new(ModelKind::Cnn, small(), 1).unwrap();
        assert_eq!(cnn.forward(x, Mode::Train).unwrap().shape(), &[3, 1]);
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let mut snn = Network::new(ModelKind::Snn, small(), 1).unwrap();
        let x = ArrayD::zeros(IxDyn(&[1, 1, 8, 8]));
        assert!(matches!(snn.forward(x, Mode::Eval), Err(Error::ShapeError(_))));
    }

    #[test]
    fn state_round_trips_and_checks_shapes() {
        let mut a = Network::new(ModelKind::Snn, small(), 1).unwrap();
        let mut b = Network::new(ModelKind::Snn, small(), 2).unwrap();
        let state = a.state();
        b.load_state(&state).unwrap();
        assert_eq!(b.state(), state);
        let mut wrong = state.clone();
        wrong.insert("fc1.weight".into(), ArrayD::zeros(IxDyn(&[1])));
        assert!(matches!(b.load_state(&wrong), Err(Error::ShapeError(_))));
        let mut cnn = Network::new(ModelKind::Cnn, small(), 1).unwrap();
        assert!(cnn.load_state(&state).is_err());
    }

    #[test]
    fn batches_stack_channels() {
        let a = Array2::from_elem((2, 3), 1.0);
        let b = Array2::from_elem((2, 3), 2.0);
        let x = batch_from_maps(&[&a, &b], 2).unwrap();
        assert_eq!(x.shape(), &[1, 2, 2, 3]);
        assert_eq!(x[[0, 1, 1, 2]], 2.0);
        assert!(batch_from_maps(&[&a, &b, &a], 2).is_err());
    }
}
