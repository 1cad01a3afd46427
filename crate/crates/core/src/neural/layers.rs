//! Layer primitives with hand-written backward passes.
//!
//! Activations are `ArrayD<f64>` with the batch on axis 0; convolutional
//! layers expect `N × C × H × W`. Every layer caches what its backward pass
//! needs during the most recent forward call.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayD, ArrayView2, ArrayViewMut2, Axis, IxDyn};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl Param {
    pub fn new(value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

pub trait Layer: Send {
    fn forward(&mut self, x: ArrayD<f64>, mode: Mode) -> Result<ArrayD<f64>>;
    /// Gradient with respect to the input of the last forward call; parameter
    /// gradients are accumulated.
    fn backward(&mut self, dy: ArrayD<f64>) -> Result<ArrayD<f64>>;
    fn params(&mut self) -> Vec<(&'static str, &mut Param)> {
        Vec::new()
    }
    /// Non-trainable state saved with the parameters.
    fn buffers(&mut self) -> Vec<(&'static str, &mut ArrayD<f64>)> {
        Vec::new()
    }
}

fn expect_rank(x: &ArrayD<f64>, rank: usize, layer: &str) -> Result<()> {
    if x.ndim() == rank {
        Ok(())
    } else {
        Err(Error::shape(format!("{layer} expects rank {rank}, got shape {:?}", x.shape())))
    }
}

// Takes ownership without copying when the array is already contiguous.
fn standard(x: ArrayD<f64>) -> ArrayD<f64> {
    if x.is_standard_layout() {
        x
    } else {
        x.as_standard_layout().into_owned()
    }
}

fn no_cache(layer: &str) -> Error {
    Error::shape(format!("{layer} backward called before forward"))
}

fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-bound..bound))
}

/// 2-D convolution with stride 1 and zero padding `kernel / 2`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub kernel: usize,
    input: Option<ArrayD<f64>>,
    /// Skip the input gradient (first layer of a network).
    pub skip_input_grad: bool,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            weight: Param::new(he_uniform(&[out_channels, in_channels, kernel, kernel], fan_in, rng)),
            bias: Param::new(ArrayD::zeros(IxDyn(&[out_channels]))),
            kernel,
            input: None,
            skip_input_grad: false,
        }
    }

    fn dims(&self) -> (usize, usize) {
        let s = self.weight.value.shape();
        (s[0], s[1])
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f64> {
        let (out_c, in_c) = self.dims();
        self.weight
            .value
            .view()
            .into_shape_with_order((out_c, in_c * self.kernel * self.kernel))
            .expect("contiguous weights")
    }

    // cols[(c, ki, kj), (y, x)] = input[c, y + ki - pad, x + kj - pad]
    fn im2col(&self, plane: &[f64], channels: usize, h: usize, w: usize, cols: &mut Array2<f64>) {
        let k = self.kernel;
        let pad = k / 2;
        let cols = cols.as_slice_mut().expect("standard layout");
        let hw = h * w;
        for c in 0..channels {
            let src = &plane[c * hw..(c + 1) * hw];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &mut cols[((c * k + ki) * k + kj) * hw..((c * k + ki) * k + kj + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + ki as isize - pad as isize;
                        let dst = &mut row[y * w..(y + 1) * w];
                        if sy < 0 || sy >= h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                        for (x, d) in dst.iter_mut().enumerate() {
                            let sx = x as isize + kj as isize - pad as isize;
                            *d = if sx < 0 || sx >= w as isize { 0.0 } else { srow[sx as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im_add(&self, cols: &Array2<f64>, channels: usize, h: usize, w: usize, plane: &mut [f64]) {
        let k = self.kernel;
        let pad = k / 2;
        let cols = cols.as_slice().expect("standard layout");
        let hw = h * w;
        for c in 0..channels {
            let dst = &mut plane[c * hw..(c + 1) * hw];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &cols[((c * k + ki) * k + kj) * hw..((c * k + ki) * k + kj + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + ki as isize - pad as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let drow = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                        for x in 0..w {
                            let sx = x as isize + kj as isize - pad as isize;
                            if sx >= 0 && sx < w as isize {
                                drow[sx as usize] += row[y * w + x];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: ArrayD<f64>, _mode: Mode) -> Result<ArrayD<f64>> {
        expect_rank(&x, 4, "conv2d")?;
        let (out_c, in_c) = self.dims();
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        if c != in_c {
            return Err(Error::shape(format!("conv2d expects {in_c} channels, got {c}")));
        }
        let x = standard(x);
        let k2 = self.kernel * self.kernel;
        let mut out = ArrayD::zeros(IxDyn(&[n, out_c, h, w]));
        let mut cols = Array2::zeros((in_c * k2, h * w));
        let wm = self.weight_matrix();
        let bias = self.bias.value.as_slice().expect("contiguous bias").to_vec();
        {
            let xs = x.as_slice().expect("standard layout");
            let os = out.as_slice_mut().expect("standard layout");
            let in_size = in_c * h * w;
            let out_size = out_c * h * w;
            for i in 0..n {
                self.im2col(&xs[i * in_size..(i + 1) * in_size], in_c, h, w, &mut cols);
                let mut o = ArrayViewMut2::from_shape((out_c, h * w), &mut os[i * out_size..(i + 1) * out_size])
                    .expect("output block");
                general_mat_mul(1.0, &wm, &cols, 0.0, &mut o);
                for (mut row, &b) in o.rows_mut().into_iter().zip(&bias) {
                    row.mapv_inplace(|v| v + b);
                }
            }
        }
        self.input = Some(x);
        Ok(out)
    }

    fn backward(&mut self, dy: ArrayD<f64>) -> Result<ArrayD<f64>> {
        let x = self.input.take().ok_or_else(|| no_cache("conv2d"))?;
        let (out_c, in_c) = self.dims();
        let (n, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
        if dy.shape() != [n, out_c, h, w] {
            return Err(Error::shape(format!("conv2d gradient has shape {:?}", dy.shape())));
        }
        let dy = standard(dy);
        let k2 = self.kernel * self.kernel;
        let mut cols = Array2::zeros((in_c * k2, h * w));
        let mut dcols = Array2::zeros((in_c * k2, h * w));
        let mut dw = Array2::zeros((out_c, in_c * k2));
        let mut db = Array1::<f64>::zeros(out_c);
        let mut dx = if self.skip_input_grad {
            ArrayD::zeros(IxDyn(&[0]))
        } else {
            ArrayD::zeros(x.raw_dim())
        };
        let wm = self.weight_matrix().to_owned();
        let xs = x.as_slice().expect("standard layout");
        let ds = dy.as_slice().expect("standard layout");
        let in_size = in_c * h * w;
        let out_size = out_c * h * w;
        for i in 0..n {
            let g = ArrayView2::from_shape((out_c, h * w), &ds[i * out_size..(i + 1) * out_size]).expect("grad block");
            self.im2col(&xs[i * in_size..(i + 1) * in_size], in_c, h, w, &mut cols);
            general_mat_mul(1.0, &g, &cols.t(), 1.0, &mut dw);
            db += &g.sum_axis(Axis(1));
            if !self.skip_input_grad {
                general_mat_mul(1.0, &wm.t(), &g, 0.0, &mut dcols);
                let dxs = dx.as_slice_mut().expect("standard layout");
                self.col2im_add(&dcols, in_c, h, w, &mut dxs[i * in_size..(i + 1) * in_size]);
            }
        }
        self.weight.grad += &dw.into_shape_with_order(self.weight.value.raw_dim()).expect("same size");
        self.bias.grad += &db.into_dyn();
        self.input = Some(x);
        Ok(dx)
    }

    fn params(&mut self) -> Vec<(&'static str, &mut Param)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }
}

/// Fully connected layer `y = x W^T + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    input: Option<Array2<f64>>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Param::new(he_uniform(&[out_features, in_features], in_features, rng)),
            bias: Param::new(ArrayD::zeros(IxDyn(&[out_features]))),
            input: None,
        }
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f64> {
        self.weight.value.view().into_dimensionality().expect("2-D weights")
    }
}

impl Layer for Linear {
    fn forward(&mut self, x: ArrayD<f64>, _mode: Mode) -> Result<ArrayD<f64>> {
        expect_rank(&x, 2, "linear")?;
        let w = self.weight_matrix();
        if x.shape()[1] != w.ncols() {
            return Err(Error::shape(format!("linear expects {} features, got {}", w.ncols(), x.shape()[1])));
        }
        let x: Array2<f64> = x.into_dimensionality().expect("checked rank");
        let mut y = x.dot(&w.t());
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().expect("1-D bias");
        y += &b;
        self.input = Some(x);
        Ok(y.into_dyn())
    }

    fn backward(&mut self, dy: ArrayD<f64>) -> Result<ArrayD<f64>> {
        let x = self.input.as_ref().ok_or_else(|| no_cache("linear"))?;
        let dy: Array2<f64> = dy
            .into_dimensionality()
            .map_err(|_| Error::shape("linear gradient must be 2-D"))?;
        if dy.nrows() != x.nrows() || dy.ncols() != self.weight.value.shape()[0] {
            return Err(Error::shape(format!("linear gradient has shape {:?}", dy.shape())));
        }
        self.weight.grad += &dy.t().dot(x).into_dyn();
        self.bias.grad += &dy.sum_axis(Axis(0)).into_dyn();
        Ok(dy.dot(&self.weight_matrix()).into_dyn())
    }

    fn params(&mut self) -> Vec<(&'static str, &mut Param)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }
}

// Views an N × C × ... activation as N × C × S with S the trailing size.
fn channel_blocks(shape: &[usize]) -> (usize, usize, usize) {
    let n = shape[0];
    let c = shape[1];
    let s = shape[2..].iter().product::<usize>();
    (n, c, s)
}

/// Batch normalization over every axis except the channel axis (axis 1).
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: ArrayD<f64>,
    pub running_var: ArrayD<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: ArrayD<f64>,
    inv_std: Vec<f64>,
    train: bool,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(ArrayD::ones(IxDyn(&[channels]))),
            beta: Param::new(ArrayD::zeros(IxDyn(&[channels]))),
            running_mean: ArrayD::zeros(IxDyn(&[channels])),
            running_var: ArrayD::ones(IxDyn(&[channels])),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    fn channels(&self) -> usize {
        self.gamma.value.len()
    }
}

impl Layer for BatchNorm {
    fn forward(&mut self, x: ArrayD<f64>, mode: Mode) -> Result<ArrayD<f64>> {
        if x.ndim() < 2 || x.shape()[1] != self.channels() {
            return Err(Error::shape(format!(
                "batch norm over {} channels got shape {:?}",
                self.channels(),
                x.shape()
            )));
        }
        let (n, c, s) = channel_blocks(x.shape());
        let count = (n * s) as f64;
        let mut x = standard(x);
        let gamma = self.gamma.value.as_slice().expect("contiguous").to_vec();
        let beta = self.beta.value.as_slice().expect("contiguous").to_vec();
        let (mean, var) = match mode {
            Mode::Train => {
                if n * s < 1 {
                    return Err(Error::shape("batch norm needs a non-empty batch"));
                }
                let xs = x.as_slice().expect("standard layout");
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for i in 0..n {
                    for ch in 0..c {
                        let block = &xs[(i * c + ch) * s..(i * c + ch + 1) * s];
                        mean[ch] += block.iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for i in 0..n {
                    for ch in 0..c {
                        let block = &xs[(i * c + ch) * s..(i * c + ch + 1) * s];
                        var[ch] += block.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count);
                let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                let m = self.momentum;
                for ch in 0..c {
                    self.running_mean[ch] = (1.0 - m) * self.running_mean[ch] + m * mean[ch];
                    self.running_var[ch] = (1.0 - m) * self.running_var[ch] + m * var[ch] * unbiased;
                }
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.iter().copied().collect(),
                self.running_var.iter().copied().collect(),
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let xs = x.as_slice_mut().expect("standard layout");
        for i in 0..n {
            for ch in 0..c {
                let block = &mut xs[(i * c + ch) * s..(i * c + ch + 1) * s];
                for v in block.iter_mut() {
                    *v = (*v - mean[ch]) * inv_std[ch];
                }
            }
        }
        let mut y = x.clone();
        let ys = y.as_slice_mut().expect("standard layout");
        for i in 0..n {
            for ch in 0..c {
                let block = &mut ys[(i * c + ch) * s..(i * c + ch + 1) * s];
                for v in block.iter_mut() {
                    *v = gamma[ch] * *v + beta[ch];
                }
            }
        }
        self.cache = Some(BnCache {
            x_hat: x,
            inv_std,
            train: mode == Mode::Train,
        });
        Ok(y)
    }

    fn backward(&mut self, dy: ArrayD<f64>) -> Result<ArrayD<f64>> {
        let cache = self.cache.as_ref().ok_or_else(|| no_cache("batch norm"))?;
        if dy.shape() != cache.x_hat.shape() {
            return Err(Error::shape(format!("batch norm gradient has shape {:?}", dy.shape())));
        }
        let (n, c, s) = channel_blocks(dy.shape());
        let count = (n * s) as f64;
        let mut dy = standard(dy);
        let xh = cache.x_hat.as_slice().expect("standard layout");
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xh = vec![0.0; c];
        {
            let ds = dy.as_slice().expect("standard layout");
            for i in 0..n {
                for ch in 0..c {
                    let r = (i * c + ch) * s..(i * c + ch + 1) * s;
                    for (g, x) in ds[r.clone()].iter().zip(&xh[r]) {
                        sum_dy[ch] += g;
                        sum_dy_xh[ch] += g * x;
                    }
                }
            }
        }
        for ch in 0..c {
            self.gamma.grad[ch] += sum_dy_xh[ch];
            self.beta.grad[ch] += sum_dy[ch];
        }
        let gamma: Vec<f64> = self.gamma.value.iter().copied().collect();
        let ds = dy.as_slice_mut().expect("standard layout");
        for i in 0..n {
            for ch in 0..c {
                let r = (i * c + ch) * s..(i * c + ch + 1) * s;
                let scale = gamma[ch] * cache.inv_std[ch];
                if cache.train {
                    let (a, b) = (sum_dy[ch] / count, sum_dy_xh[ch] / count);
                    for (g, x) in ds[r.clone()].iter_mut().zip(&xh[r]) {
                        *g = scale * (*g - a - x * b);
                    }
                } else {
                    ds[r].iter_mut().for_each(|g| *g *= scale);
                }
            }
        }
        Ok(dy)
    }

    fn params(&mut self) -> Vec<(&'static str, &mut Param)> {
        vec![("gamma", &mut self.gamma), ("beta", &mut self.beta)]
    }

    fn buffers(&mut self) -> Vec<(&'static str, &mut ArrayD<f64>)> {
        vec![("running_mean", &mut self.running_mean), ("running_var", &mut self.running_var)]
    }
}

/// Parametric ReLU with one slope per channel (axis 1).
#[derive(Debug, Clone)]
pub struct PRelu {
    pub slope: Param,
    input: Option<ArrayD<f64>>,
}

impl PRelu {
    pub fn new(channels: usize) -> Self {
        Self {
            slope: Param::new(ArrayD::from_elem(IxDyn(&[channels]), 0.25)),
            input: None,
        }
    }
}

impl Layer for PRelu {
    fn forward(&mut self, x: ArrayD<f64>, _mode: Mode) -> Result<ArrayD<f64>> {
        let channels = self.slope.value.len();
        if x.ndim() < 2 || x.shape()[1] != channels {
            return Err(Error::shape(format!("prelu over {channels} channels got shape {:?}", x.shape())));
        }
        let (n, c, s) = channel_blocks(x.shape());
        let x = standard(x);
        let mut y = x.clone();
        let ys = y.as_slice_mut().expect("standard layout");
        for i in 0..n {
            for ch in 0..c {
                let a = self.slope.value[ch];
                for v in ys[(i * c + ch) * s..(i * c + ch + 1) * s].iter_mut() {
                    if *v <= 0.0 {
                        *v *= a;
                    }
                }
            }
        }
        self.input = Some(x);
        Ok(y)
    }

    fn backward(&mut self, dy: ArrayD<f64>) -> Result<ArrayD<f64>> {
        let x = self.input.as_ref().ok_or_else(|| no_cache("prelu"))?;
        if dy.shape() != x.shape() {
            return Err(Error::shape(format!("prelu gradient has shape {:?}", dy.shape())));
        }
        let (n, c, s) = channel_blocks(x.shape());
        let mut dy = standard(dy);
        let xs = x.as_slice().expect("standard layout");
        let ds = dy.as_slice_mut().expect("standard layout");
        for i in 0..n {
            for ch in 0..c {
                let a = self.slope.value[ch];
                let mut da = 0.0;
                let r = (i * c + ch) * s..(i * c + ch + 1) * s;
                for (g, &v) in ds[r.clone()].iter_mut().zip(&xs[r]) {
                    if v <= 0.0 {
                        da += *g * v;
                        *g *= a;
                    }
                }
                self.slope.grad[ch] += da;
            }
        }
        Ok(dy)
    }

    fn params(&mut self) -> Vec<(&'static str, &mut Param)> {
        vec![("slope", &mut self.slope)]
    }
}

/// Inverted dropout: zeroes a fraction `rate` of activations during training
/// and rescales the rest; the identity in evaluation.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    rng: ChaCha8Rng,
    mask: Option<Vec<bool>>,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
        }
    }
}

impl Layer for Dropout {
    fn forward(&mut self, x: ArrayD<f64>, mode: Mode) -> Result<ArrayD<f64>> {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.mask = None;
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - self.rate);
        // an element is dropped when a uniform u32 falls below rate * 2^32
        let cut = (self.rate * 4_294_967_296.0).min(u32::MAX as f64) as u32;
        let mut y = standard(x);
        let mut mask = Vec::with_capacity(y.len());
        for v in y.iter_mut() {
            let kept = self.rng.next_u32() >= cut;
            mask.push(kept);
            *v = if kept { *v * keep } else { 0.0 };
        }
        self.mask = Some(mask);
        Ok(y)
    }

    fn backward(&mut self, dy: ArrayD<f64>) -> Result<ArrayD<f64>> {
        let Some(mask) = &self.mask else {
            return Ok(dy);
        };
        if dy.len() != mask.len() {
            return Err(Error::shape(format!("dropout gradient has {} elements", dy.len())));
        }
        let keep = 1.0 / (1.0 - self.rate);
        let mut dy = standard(dy);
        for (g, &m) in dy.iter_mut().zip(mask) {
            *g = if m { *g * keep } else { 0.0 };
        }
        Ok(dy)
    }
}

/// 2 × 2 max pooling with stride 2; odd trailing rows and columns are dropped.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    argmax: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2 {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for MaxPool2 {
    fn forward(&mut self, x: ArrayD<f64>, _mode: Mode) -> Result<ArrayD<f64>> {
        expect_rank(&x, 4, "max pool")?;
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(Error::shape(format!("max pool input {h}×{w} too small")));
        }
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut out = ArrayD::zeros(IxDyn(&[n, c, oh, ow]));
        let mut idx = Vec::with_capacity(n * c * oh * ow);
        let os = out.as_slice_mut().expect("standard layout");
        for p in 0..n * c {
            let plane = p * h * w;
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = plane + 2 * y * w + 2 * xo;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let j = plane + (2 * y + dy) * w + 2 * xo + dx;
                        if xs[j] > xs[best] {
                            best = j;
                        }
                    }
                    os[(p * oh + y) * ow + xo] = xs[best];
                    idx.push(best);
                }
            }
        }
        self.argmax = Some((idx, x.shape().to_vec()));
        Ok(out)
    }

    fn backward(&mut self, dy: ArrayD<f64>) -> Result<ArrayD<f64>> {
        let (idx, shape) = self.argmax.as_ref().ok_or_else(|| no_cache("max pool"))?;
        if dy.len() != idx.len() {
            return Err(Error::shape(format!("max pool gradient has {} elements", dy.len())));
        }
        let mut dx = ArrayD::zeros(IxDyn(shape));
        let dxs = dx.as_slice_mut().expect("standard layout");
        for (g, &j) in dy.as_standard_layout().iter().zip(idx) {
            dxs[j] += g;
        }
        Ok(dx)
    }
}

/// Collapses every axis after the batch axis.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Flatten {
    fn forward(&mut self, x: ArrayD<f64>, _mode: Mode) -> Result<ArrayD<f64>> {
        if x.ndim() < 2 {
            return Err(Error::shape("flatten needs a batch axis"));
        }
        let n = x.shape()[0];
        let rest = x.len() / n.max(1);
        self.shape = Some(x.shape().to_vec());
        let x = standard(x);
        Ok(x.into_shape_with_order(IxDyn(&[n, rest])).expect("same size"))
    }

    fn backward(&mut self, dy: ArrayD<f64>) -> Result<ArrayD<f64>> {
        let shape = self.shape.as_ref().ok_or_else(|| no_cache("flatten"))?;
        let dy = standard(dy);
        dy.into_shape_with_order(IxDyn(shape))
            .map_err(|_| Error::shape("flatten gradient has the wrong size"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn centered_unit_kernel_copies_input() {
        let mut conv = Conv2d::new(1, 1, 3, &mut rng());
        conv.weight.value.fill(0.0);
        conv.weight.value[[0, 0, 1, 1]] = 1.0;
        let x = ArrayD::from_shape_fn(IxDyn(&[2, 1, 5, 4]), |i| (i[0] * 100 + i[2] * 10 + i[3]) as f64);
        let y = conv.forward(x.clone(), Mode::Eval).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn shifted_kernel_reads_zero_padding() {
        let mut conv = Conv2d::new(1, 1, 3, &mut rng());
        conv.weight.value.fill(0.0);
        // output (y, x) reads input (y, x + 1)
        conv.weight.value[[0, 0, 1, 2]] = 1.0;
        let x = ArrayD::from_shape_fn(IxDyn(&[1, 1, 2, 3]), |i| (i[2] * 3 + i[3] + 1) as f64);
        let y = conv.forward(x, Mode::Eval).unwrap();
        assert_eq!(y.iter().copied().collect::<Vec<_>>(), vec![2.0, 3.0, 0.0, 5.0, 6.0, 0.0]);
    }

    #[test]
    fn zero_slope_prelu_is_relu() {
        let mut p = PRelu::new(1);
        p.slope.value.fill(0.0);
        let x = ArrayD::from_shape_vec(IxDyn(&[1, 1, 2]), vec![-2.0, 3.0]).unwrap();
        let y = p.forward(x, Mode::Train).unwrap();
        assert_eq!(y.iter().copied().collect::<Vec<_>>(), vec![0.0, 3.0]);
    }

    #[test]
    fn dropout_only_acts_in_training() {
        let mut d = Dropout::new(0.1, 3);
        let x = ArrayD::from_elem(IxDyn(&[10, 1000]), 1.0);
        assert_eq!(d.forward(x.clone(), Mode::Eval).unwrap(), x);
        let y = d.forward(x, Mode::Train).unwrap();
        let dropped = y.iter().filter(|&&v| v == 0.0).count() as f64 / y.len() as f64;
        assert!((dropped - 0.1).abs() < 0.02, "dropped {dropped}");
        assert!(y.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.9).abs() < 1e-12));
    }

    #[test]
    fn batch_norm_standardizes_in_training() {
        let mut bn = BatchNorm::new(2);
        let x = ArrayD::from_shape_fn(IxDyn(&[4, 2]), |i| (i[0] * 3 + i[1] * 10) as f64);
        let y = bn.forward(x, Mode::Train).unwrap();
        for c in 0..2 {
            let col: Vec<f64> = (0..4).map(|i| y[[i, c]]).collect();
            let mean = col.iter().sum::<f64>() / 4.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
        // running mean moved a tenth of the way toward the batch mean 4.5
        assert!((bn.running_mean[0] - 0.45).abs() < 1e-12);
    }

    #[test]
    fn max_pool_halves_and_routes_gradient() {
        let mut pool = MaxPool2::new();
        let x = ArrayD::from_shape_vec(IxDyn(&[1, 1, 3, 4]), (0..12).map(f64::from).collect()).unwrap();
        let y = pool.forward(x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 2]);
        assert_eq!(y.iter().copied().collect::<Vec<_>>(), vec![5.0, 7.0]);
        let dx = pool.backward(ArrayD::ones(IxDyn(&[1, 1, 1, 2]))).unwrap();
        assert_eq!(dx.iter().sum::<f64>(), 2.0);
        assert_eq!(dx[[0, 0, 1, 1]], 1.0);
    }

    #[test]
    fn shape_mismatches_are_reported() {
        let mut conv = Conv2d::new(2, 1, 3, &mut rng());
        let bad = ArrayD::zeros(IxDyn(&[1, 1, 4, 4]));
        assert!(matches!(conv.forward(bad, Mode::Eval), Err(Error::ShapeError(_))));
        let mut lin = Linear::new(3, 2, &mut rng());
        assert!(matches!(lin.forward(ArrayD::zeros(IxDyn(&[2, 4])), Mode::Eval), Err(Error::ShapeError(_))));
        let mut bn = BatchNorm::new(3);
        assert!(bn.forward(ArrayD::zeros(IxDyn(&[2, 2])), Mode::Train).is_err());
    }
}
