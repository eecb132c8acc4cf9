//! Ten-layer convolutional regression network.
//!
//! input -> conv 3x3 -> batch norm -> ReLU -> conv 3x3 -> batch norm -> ReLU
//! -> dense -> ReLU -> dropout -> dense -> ReLU -> dropout -> linear output.
//!
//! Activations are stored per sample in channel-last order, matching
//! [`FeatureTensor`]. All arithmetic is double precision.

mod io;
mod kernels;
mod predict;
mod train;

pub use io::{checksum, from_bytes, load_model, save_model, to_bytes, MODEL_MAGIC, MODEL_VERSION};
pub use predict::Predictor;
pub use train::{split_indices, train, TrainConfig, TrainReport};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::beamforming::{BeamDims, HybridBeamformer};
use crate::channel::FrequencyChannel;
use crate::dataset::{self, FeatureTensor};
use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub conv_filters: usize,
    pub fc_units: usize,
    pub dropout_p: f64,
    /// `(rows, cols, channels)` of the input tensor.
    pub input_shape: (usize, usize, usize),
    pub output_len: usize,
}

impl CnnConfig {
    /// 16 filters, 128 dense units, dropout 0.5.
    pub fn desk(dims: &BeamDims) -> Self {
        Self::for_dims(dims, 16, 128, 0.5)
    }

    pub fn for_dims(dims: &BeamDims, conv_filters: usize, fc_units: usize, dropout_p: f64) -> Self {
        Self {
            conv_filters,
            fc_units,
            dropout_p,
            input_shape: dims.feature_shape(),
            output_len: dims.label_len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.input_shape;
        if self.conv_filters == 0 || self.fc_units == 0 || self.output_len == 0 || h * w * c == 0 {
            return Err(Error::Config(format!("network sizes must be at least 1: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p = {} outside [0, 1)",
                self.dropout_p
            )));
        }
        Ok(())
    }

    fn flat_len(&self) -> usize {
        let (h, w, _) = self.input_shape;
        h * w * self.conv_filters
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layer {
    Conv1,
    Norm1,
    Conv2,
    Norm2,
    Dense1,
    Dense2,
    Output,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// 3x3 convolution, stride 1, zero "same" padding. Weights are laid out
/// `[ky][kx][c_in][c_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3 {
    pub c_in: usize,
    pub c_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Fully connected layer, weights laid out `[n_in][n_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct CnnModel {
    pub config: CnnConfig,
    pub conv1: Conv3,
    pub norm1: BatchNorm,
    pub conv2: Conv3,
    pub norm2: BatchNorm,
    pub dense1: Dense,
    pub dense2: Dense,
    pub output: Dense,
    revision: u64,
    frozen: Vec<Layer>,
}

impl PartialEq for CnnModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.conv1 == other.conv1
            && self.norm1 == other.norm1
            && self.conv2 == other.conv2
            && self.norm2 == other.norm2
            && self.dense1 == other.dense1
            && self.dense2 == other.dense2
            && self.output == other.output
    }
}

/// Gradients in the order of [`CnnModel::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
struct NormCache {
    xhat: Vec<Vec<f64>>,
    mean: Vec<f64>,
    var: Vec<f64>,
    inv_std: Vec<f64>,
}

/// Activations and statistics recorded by a forward pass, consumed by
/// [`CnnModel::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    revision: u64,
    mode: Mode,
    input: Vec<Vec<f64>>,
    n1: NormCache,
    a1: Vec<Vec<f64>>,
    n2: NormCache,
    a2: Vec<Vec<f64>>,
    r1: Vec<Vec<f64>>,
    mask1: Option<Vec<Vec<f64>>>,
    d1: Vec<Vec<f64>>,
    r2: Vec<Vec<f64>>,
    mask2: Option<Vec<Vec<f64>>>,
    d2: Vec<Vec<f64>>,
    pub output: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch_len(&self) -> usize {
        self.output.len()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

fn glorot(n: usize, fan_in: usize, fan_out: usize, rng: &mut SimRng) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n)
        .map(|_| ((2.0 * rng.random::<f64>() - 1.0) * limit) as f32 as f64)
        .collect()
}

impl Conv3 {
    fn new(c_in: usize, c_out: usize, rng: &mut SimRng) -> Self {
        Self {
            c_in,
            c_out,
            weight: glorot(9 * c_in * c_out, 9 * c_in, 9 * c_out, rng),
            bias: vec![0.0; c_out],
        }
    }

    fn forward(&self, h: usize, w: usize, x: &[f64]) -> Vec<f64> {
        kernels::conv3(h, w, self.c_in, x, &self.weight, &self.bias)
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        h: usize,
        w: usize,
        x: &[f64],
        dout: &[f64],
        dw: &mut [f64],
        db: &mut [f64],
        mut dx: Option<&mut [f64]>,
    ) {
        let (ci, co) = (self.c_in, self.c_out);
        for y in 0..h {
            for xx in 0..w {
                let g = &dout[(y * w + xx) * co..(y * w + xx + 1) * co];
                for (b, &gv) in db.iter_mut().zip(g) {
                    *b += gv;
                }
                for (ky, yy) in taps(y, h) {
                    for (kx, xs) in taps(xx, w) {
                        let base = (yy * w + xs) * ci;
                        let k0 = (ky * 3 + kx) * ci * co;
                        for i in 0..ci {
                            let v = x[base + i];
                            let wr = &self.weight[k0 + i * co..k0 + (i + 1) * co];
                            if v != 0.0 {
                                let dwr = &mut dw[k0 + i * co..k0 + (i + 1) * co];
                                for (d, &gv) in dwr.iter_mut().zip(g) {
                                    *d += v * gv;
                                }
                            }
                            if let Some(dx) = dx.as_deref_mut() {
                                dx[base + i] += dot(wr, g);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// In-bounds kernel taps `(k, position)` around `p` for a length-`n` axis.
fn taps(p: usize, n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..3usize).filter_map(move |k| {
        let q = p as isize + k as isize - 1;
        (q >= 0 && (q as usize) < n).then_some((k, q as usize))
    })
}

impl BatchNorm {
    fn new(c: usize) -> Self {
        Self {
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
        }
    }

    /// Normalizes, scales, shifts and applies ReLU.
    fn forward(&self, z: &[Vec<f64>], mode: Mode) -> (NormCache, Vec<Vec<f64>>) {
        let c = self.gamma.len();
        let (mean, var) = match mode {
            Mode::Infer => (self.running_mean.clone(), self.running_var.clone()),
            Mode::Train => {
                let count = z.iter().map(|s| s.len() / c).sum::<usize>() as f64;
                let mut mean = vec![0.0; c];
                for s in z {
                    for px in s.chunks_exact(c) {
                        for (m, &v) in mean.iter_mut().zip(px) {
                            *m += v;
                        }
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count);
                let mut var = vec![0.0; c];
                for s in z {
                    for px in s.chunks_exact(c) {
                        for ((v, &x), &m) in var.iter_mut().zip(px).zip(&mean) {
                            *v += (x - m) * (x - m);
                        }
                    }
                }
                var.iter_mut().for_each(|v| *v /= count);
                (mean, var)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = Vec::with_capacity(z.len());
        let mut act = Vec::with_capacity(z.len());
        for s in z {
            let mut xh = s.clone();
            let mut a = s.clone();
            for (xpx, apx) in xh.chunks_exact_mut(c).zip(a.chunks_exact_mut(c)) {
                for ch in 0..c {
                    let v = (xpx[ch] - mean[ch]) * inv_std[ch];
                    xpx[ch] = v;
                    apx[ch] = (self.gamma[ch] * v + self.beta[ch]).max(0.0);
                }
            }
            xhat.push(xh);
            act.push(a);
        }
        (
            NormCache {
                xhat,
                mean,
                var,
                inv_std,
            },
            act,
        )
    }

    /// Backward through ReLU and normalization. Returns the gradient with
    /// respect to the normalization input.
    fn backward(
        &self,
        cache: &NormCache,
        act: &[Vec<f64>],
        dact: &[Vec<f64>],
        mode: Mode,
        dgamma: &mut [f64],
        dbeta: &mut [f64],
    ) -> Vec<Vec<f64>> {
        let c = self.gamma.len();
        let dy: Vec<Vec<f64>> = act
            .iter()
            .zip(dact)
            .map(|(a, d)| a.iter().zip(d).map(|(&a, &d)| if a > 0.0 { d } else { 0.0 }).collect())
            .collect();
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for (d, xh) in dy.iter().zip(&cache.xhat) {
            for (dpx, xpx) in d.chunks_exact(c).zip(xh.chunks_exact(c)) {
                for ch in 0..c {
                    sum_dy[ch] += dpx[ch];
                    sum_dy_xhat[ch] += dpx[ch] * xpx[ch];
                }
            }
        }
        for ch in 0..c {
            dgamma[ch] += sum_dy_xhat[ch];
            dbeta[ch] += sum_dy[ch];
        }
        let count = dy.iter().map(|s| s.len() / c).sum::<usize>() as f64;
        dy.iter()
            .zip(&cache.xhat)
            .map(|(d, xh)| {
                let mut dz = d.clone();
                for (dpx, xpx) in dz.chunks_exact_mut(c).zip(xh.chunks_exact(c)) {
                    for ch in 0..c {
                        let k = self.gamma[ch] * cache.inv_std[ch];
                        dpx[ch] = match mode {
                            Mode::Infer => k * dpx[ch],
                            Mode::Train => {
                                k * (dpx[ch] - sum_dy[ch] / count - xpx[ch] * sum_dy_xhat[ch] / count)
                            }
                        };
                    }
                }
                dz
            })
            .collect()
    }
}

impl Dense {
    fn new(n_in: usize, n_out: usize, rng: &mut SimRng) -> Self {
        Self {
            n_in,
            n_out,
            weight: glorot(n_in * n_out, n_in, n_out, rng),
            bias: vec![0.0; n_out],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        kernels::dense(x, &self.weight, &self.bias)
    }

    fn backward(&self, x: &[f64], g: &[f64], dw: &mut [f64], db: &mut [f64], dx: Option<&mut [f64]>) {
        for (d, &gv) in db.iter_mut().zip(g) {
            *d += gv;
        }
        for (dwr, &v) in dw.chunks_exact_mut(self.n_out).zip(x) {
            if v != 0.0 {
                axpy(dwr, v, g);
            }
        }
        if let Some(dx) = dx {
            for (a, row) in dx.iter_mut().zip(self.weight.chunks_exact(self.n_out)) {
                *a += dot(row, g);
            }
        }
    }
}

/// `y += a x`.
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight interleaved partial sums, combined in a fixed order.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        let x: &[f64; 8] = x.try_into().expect("chunk of 8");
        let y: &[f64; 8] = y.try_into().expect("chunk of 8");
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

fn dropout_masks(
    n: usize,
    len: usize,
    p: f64,
    rng: Option<&mut SimRng>,
) -> Option<Vec<Vec<f64>>> {
    let rng = rng?;
    if p == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(
        (0..n)
            .map(|_| {
                (0..len)
                    .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                    .collect()
            })
            .collect(),
    )
}

fn apply_mask(r: &[Vec<f64>], mask: &Option<Vec<Vec<f64>>>) -> Vec<Vec<f64>> {
    match mask {
        None => r.to_vec(),
        Some(m) => r
            .iter()
            .zip(m)
            .map(|(a, k)| a.iter().zip(k).map(|(x, y)| x * y).collect())
            .collect(),
    }
}

fn unmask(d: &mut [Vec<f64>], mask: &Option<Vec<Vec<f64>>>) {
    if let Some(m) = mask {
        for (a, k) in d.iter_mut().zip(m) {
            a.iter_mut().zip(k).for_each(|(x, y)| *x *= y);
        }
    }
}

fn relu_grad(d: &mut [Vec<f64>], r: &[Vec<f64>]) {
    for (a, ra) in d.iter_mut().zip(r) {
        a.iter_mut().zip(ra).for_each(|(x, &y)| {
            if y <= 0.0 {
                *x = 0.0
            }
        });
    }
}

/// Mean squared error.
pub fn loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Dimension(format!(
            "prediction length {} vs target length {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

impl CnnModel {
    /// Glorot-uniform weights, zero biases, unit scales, seeded per layer.
    /// Initial values are representable in single precision.
    pub fn new(config: CnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (_, _, c) = config.input_shape;
        let f = config.conv_filters;
        let u = config.fc_units;
        let r = |k: u64| rng::rng_for(seed, &[rng::stream::NET_INIT, k]);
        Ok(Self {
            conv1: Conv3::new(c, f, &mut r(0)),
            norm1: BatchNorm::new(f),
            conv2: Conv3::new(f, f, &mut r(1)),
            norm2: BatchNorm::new(f),
            dense1: Dense::new(config.flat_len(), u, &mut r(2)),
            dense2: Dense::new(u, u, &mut r(3)),
            output: Dense::new(u, config.output_len, &mut r(4)),
            config,
            revision: 0,
            frozen: Vec::new(),
        })
    }

    /// Assembles a model from explicit layers, checking shapes.
    #[allow(clippy::too_many_arguments)]
    pub fn from_layers(
        config: CnnConfig,
        conv1: Conv3,
        norm1: BatchNorm,
        conv2: Conv3,
        norm2: BatchNorm,
        dense1: Dense,
        dense2: Dense,
        output: Dense,
    ) -> Result<Self> {
        let model = Self {
            config,
            conv1,
            norm1,
            conv2,
            norm2,
            dense1,
            dense2,
            output,
            revision: 0,
            frozen: Vec::new(),
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        let (f, u) = (cfg.conv_filters, cfg.fc_units);
        let conv_ok = |c: &Conv3, ci: usize| {
            c.c_in == ci && c.c_out == f && c.weight.len() == 9 * ci * f && c.bias.len() == f
        };
        let norm_ok = |n: &BatchNorm| {
            [&n.gamma, &n.beta, &n.running_mean, &n.running_var]
                .iter()
                .all(|v| v.len() == f)
        };
        let dense_ok = |d: &Dense, i: usize, o: usize| {
            d.n_in == i && d.n_out == o && d.weight.len() == i * o && d.bias.len() == o
        };
        let ok = conv_ok(&self.conv1, cfg.input_shape.2)
            && conv_ok(&self.conv2, f)
            && norm_ok(&self.norm1)
            && norm_ok(&self.norm2)
            && dense_ok(&self.dense1, cfg.flat_len(), u)
            && dense_ok(&self.dense2, u, u)
            && dense_ok(&self.output, u, cfg.output_len);
        if !ok {
            return Err(Error::Dimension("layer shapes inconsistent with network config".into()));
        }
        Ok(())
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// Gradients of a frozen layer are reported as exactly zero.
    pub fn freeze(&mut self, layer: Layer) {
        if !self.frozen.contains(&layer) {
            self.frozen.push(layer);
        }
    }

    pub fn unfreeze(&mut self, layer: Layer) {
        self.frozen.retain(|&l| l != layer);
    }

    /// Trainable tensors and the layer each belongs to.
    pub fn params(&self) -> Vec<(Layer, &[f64])> {
        vec![
            (Layer::Conv1, &self.conv1.weight[..]),
            (Layer::Conv1, &self.conv1.bias[..]),
            (Layer::Norm1, &self.norm1.gamma[..]),
            (Layer::Norm1, &self.norm1.beta[..]),
            (Layer::Conv2, &self.conv2.weight[..]),
            (Layer::Conv2, &self.conv2.bias[..]),
            (Layer::Norm2, &self.norm2.gamma[..]),
            (Layer::Norm2, &self.norm2.beta[..]),
            (Layer::Dense1, &self.dense1.weight[..]),
            (Layer::Dense1, &self.dense1.bias[..]),
            (Layer::Dense2, &self.dense2.weight[..]),
            (Layer::Dense2, &self.dense2.bias[..]),
            (Layer::Output, &self.output.weight[..]),
            (Layer::Output, &self.output.bias[..]),
        ]
    }

    /// Mutable trainable tensors, same order as [`Self::params`]. Invalidates
    /// outstanding forward caches.
    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.revision += 1;
        vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.norm1.gamma,
            &mut self.norm1.beta,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.norm2.gamma,
            &mut self.norm2.beta,
            &mut self.dense1.weight,
            &mut self.dense1.bias,
            &mut self.dense2.weight,
            &mut self.dense2.bias,
            &mut self.output.weight,
            &mut self.output.bias,
        ]
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|(_, p)| p.iter().all(|v| v.is_finite()))
            && [&self.norm1, &self.norm2].iter().all(|n| {
                n.running_mean.iter().chain(&n.running_var).all(|v| v.is_finite())
            })
    }

    /// Rounds every stored value to single precision.
    pub fn quantize_f32(&mut self) {
        let q = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x = *x as f32 as f64);
        for p in self.params_mut() {
            q(p);
        }
        for n in [&mut self.norm1, &mut self.norm2] {
            q(&mut n.running_mean);
            q(&mut n.running_var);
        }
        self.config.dropout_p = self.config.dropout_p as f32 as f64;
    }

    fn check_input(&self, x: &FeatureTensor) -> Result<()> {
        let (h, w, c) = self.config.input_shape;
        if x.rows != h || x.cols != w || x.data.len() != h * w * c {
            return Err(Error::Dimension(format!(
                "input {}x{} with {} values, network expects {h}x{w}x{c}",
                x.rows,
                x.cols,
                x.data.len()
            )));
        }
        Ok(())
    }

    /// Batched forward pass. In train mode normalization uses batch
    /// statistics and, when `dropout` is given, inverted dropout masks are
    /// drawn from it. Infer mode is deterministic.
    pub fn forward_batch(
        &self,
        xs: &[&FeatureTensor],
        mode: Mode,
        dropout: Option<&mut SimRng>,
    ) -> Result<ForwardCache> {
        if xs.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        for x in xs {
            self.check_input(x)?;
        }
        let (h, w, _) = self.config.input_shape;
        let input: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| x.data.iter().map(|&v| f64::from(v)).collect())
            .collect();
        let z1: Vec<Vec<f64>> = input.iter().map(|x| self.conv1.forward(h, w, x)).collect();
        let (n1, a1) = self.norm1.forward(&z1, mode);
        drop(z1);
        let z2: Vec<Vec<f64>> = a1.iter().map(|x| self.conv2.forward(h, w, x)).collect();
        let (n2, a2) = self.norm2.forward(&z2, mode);
        drop(z2);

        let mut dropout = match mode {
            Mode::Train => dropout,
            Mode::Infer => None,
        };
        let p = self.config.dropout_p;
        let u = self.config.fc_units;
        let r1: Vec<Vec<f64>> = a2.iter().map(|x| relu(self.dense1.forward(x))).collect();
        let mask1 = dropout_masks(xs.len(), u, p, dropout.as_deref_mut());
        let d1 = apply_mask(&r1, &mask1);
        let r2: Vec<Vec<f64>> = d1.iter().map(|x| relu(self.dense2.forward(x))).collect();
        let mask2 = dropout_masks(xs.len(), u, p, dropout.as_deref_mut());
        let d2 = apply_mask(&r2, &mask2);
        let output = d2.iter().map(|x| self.output.forward(x)).collect();
        Ok(ForwardCache {
            revision: self.revision,
            mode,
            input,
            n1,
            a1,
            n2,
            a2,
            r1,
            mask1,
            d1,
            r2,
            mask2,
            d2,
            output,
        })
    }

    pub fn forward(&self, x: &FeatureTensor, mode: Mode, dropout: Option<&mut SimRng>) -> Result<Vec<f64>> {
        let mut cache = self.forward_batch(&[x], mode, dropout)?;
        Ok(cache.output.pop().expect("one output"))
    }

    pub fn predict(&self, x: &FeatureTensor) -> Result<Vec<f64>> {
        self.forward(x, Mode::Infer, None)
    }

    /// Mean over the batch of the per-sample MSE, and its gradient with
    /// respect to every trainable tensor.
    pub fn backward(&self, cache: &ForwardCache, targets: &[&[f64]]) -> Result<(f64, Gradients)> {
        if cache.revision != self.revision {
            return Err(Error::StaleCache {
                cached: cache.revision,
                current: self.revision,
            });
        }
        let b = cache.batch_len();
        if targets.len() != b {
            return Err(Error::Dimension(format!("{} targets for a batch of {b}", targets.len())));
        }
        let n_out = self.config.output_len;
        let mut total = 0.0;
        let mut g_out = Vec::with_capacity(b);
        for (y, t) in cache.output.iter().zip(targets) {
            total += loss(y, t)?;
            let scale = 2.0 / (b * n_out) as f64;
            g_out.push(y.iter().zip(t.iter()).map(|(y, t)| scale * (y - t)).collect::<Vec<f64>>());
        }
        let batch_loss = total / b as f64;

        let mut grads: Vec<Vec<f64>> = self.params().iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        let (gs, rest) = grads.split_at_mut(12);
        let [g_c1w, g_c1b, g_n1g, g_n1b, g_c2w, g_c2b, g_n2g, g_n2b, g_d1w, g_d1b, g_d2w, g_d2b] = gs else {
            unreachable!()
        };
        let [g_ow, g_ob] = rest else { unreachable!() };

        let u = self.config.fc_units;
        let mut dd2 = vec![vec![0.0; u]; b];
        for s in 0..b {
            self.output
                .backward(&cache.d2[s], &g_out[s], g_ow, g_ob, Some(&mut dd2[s]));
        }
        unmask(&mut dd2, &cache.mask2);
        relu_grad(&mut dd2, &cache.r2);
        let mut dd1 = vec![vec![0.0; u]; b];
        for s in 0..b {
            self.dense2
                .backward(&cache.d1[s], &dd2[s], g_d2w, g_d2b, Some(&mut dd1[s]));
        }
        unmask(&mut dd1, &cache.mask1);
        relu_grad(&mut dd1, &cache.r1);
        let flat = self.config.flat_len();
        let mut da2 = vec![vec![0.0; flat]; b];
        for s in 0..b {
            self.dense1
                .backward(&cache.a2[s], &dd1[s], g_d1w, g_d1b, Some(&mut da2[s]));
        }
        let dz2 = self
            .norm2
            .backward(&cache.n2, &cache.a2, &da2, cache.mode, g_n2g, g_n2b);
        drop(da2);
        let (h, w, _) = self.config.input_shape;
        let mut da1 = vec![vec![0.0; flat]; b];
        for s in 0..b {
            self.conv2
                .backward(h, w, &cache.a1[s], &dz2[s], g_c2w, g_c2b, Some(&mut da1[s]));
        }
        let dz1 = self
            .norm1
            .backward(&cache.n1, &cache.a1, &da1, cache.mode, g_n1g, g_n1b);
        for s in 0..b {
            self.conv1
                .backward(h, w, &cache.input[s], &dz1[s], g_c1w, g_c1b, None);
        }

        for ((layer, _), g) in self.params().iter().zip(grads.iter_mut()) {
            if self.frozen.contains(layer) {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok((batch_loss, Gradients { tensors: grads }))
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// statistics with momentum [`BN_MOMENTUM`].
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        if cache.mode != Mode::Train {
            return;
        }
        self.revision += 1;
        for (n, c) in [(&mut self.norm1, &cache.n1), (&mut self.norm2, &cache.n2)] {
            for (r, &m) in n.running_mean.iter_mut().zip(&c.mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
            }
            for (r, &v) in n.running_var.iter_mut().zip(&c.var) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
            }
        }
    }
}

fn check_dims(config: &CnnConfig, fc: &FrequencyChannel, dims: &BeamDims) -> Result<()> {
    if config.input_shape != dims.feature_shape() || config.output_len != dims.label_len() {
        return Err(Error::Dimension(format!(
            "model {:?} -> {} does not match dimensions {dims:?}",
            config.input_shape, config.output_len
        )));
    }
    if (fc.n_rx(), fc.n_tx(), fc.n_subcarriers()) != (dims.n_rx, dims.n_tx, dims.n_subcarriers) {
        return Err(Error::Dimension(format!(
            "channel {}x{}x{} does not match dimensions {dims:?}",
            fc.n_rx(),
            fc.n_tx(),
            fc.n_subcarriers()
        )));
    }
    Ok(())
}

/// Channel -> features -> inference -> beamformers.
pub fn predict_beamformers(
    model: &CnnModel,
    fc: &FrequencyChannel,
    dims: &BeamDims,
) -> Result<HybridBeamformer> {
    check_dims(&model.config, fc, dims)?;
    let z = model.predict(&dataset::build_features(fc))?;
    dataset::reconstruct_beamformers(&z, dims)
}
