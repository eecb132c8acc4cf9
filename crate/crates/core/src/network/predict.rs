use super::{kernels, BatchNorm, CnnConfig, CnnModel, BN_EPS};
use crate::beamforming::{BeamDims, HybridBeamformer};
use crate::channel::FrequencyChannel;
use crate::dataset::{self, FeatureTensor};
use crate::error::{Error, Result};

/// Single-precision weights starting on a cache-line boundary.
#[derive(Clone, Debug)]
struct Layer32 {
    storage: Vec<f32>,
    offset: usize,
    len: usize,
    bias: Vec<f64>,
}

impl Layer32 {
    fn weight(&self) -> &[f32] {
        &self.storage[self.offset..self.offset + self.len]
    }
}

#[derive(Clone, Debug)]
struct Norm {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    gamma: Vec<f64>,
    beta: Vec<f64>,
}

impl Norm {
    fn new(n: &BatchNorm) -> Self {
        Self {
            mean: n.running_mean.clone(),
            inv_std: n.running_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect(),
            gamma: n.gamma.clone(),
            beta: n.beta.clone(),
        }
    }

    fn apply(&self, z: &mut [f64]) {
        let c = self.mean.len();
        for px in z.chunks_exact_mut(c) {
            for ch in 0..c {
                let v = (px[ch] - self.mean[ch]) * self.inv_std[ch];
                px[ch] = (self.gamma[ch] * v + self.beta[ch]).max(0.0);
            }
        }
    }
}

fn pack(weight: &[f64], bias: &[f64]) -> Layer32 {
    const LINE: usize = 64 / std::mem::size_of::<f32>();
    let mut storage = vec![0.0f32; weight.len() + LINE];
    let offset = storage.as_ptr().align_offset(64).min(LINE);
    for (s, &w) in storage[offset..].iter_mut().zip(weight) {
        *s = w as f32;
    }
    Layer32 {
        storage,
        offset,
        len: weight.len(),
        bias: bias.to_vec(),
    }
}

/// Inference-only snapshot of a [`CnnModel`] with weights stored in single
/// precision. For a model whose weights are single-precision values (every
/// trained or loaded model) the output equals [`CnnModel::predict`] bit for
/// bit.
#[derive(Clone, Debug)]
pub struct Predictor {
    config: CnnConfig,
    conv1: Layer32,
    norm1: Norm,
    conv2: Layer32,
    norm2: Norm,
    dense1: Layer32,
    dense2: Layer32,
    output: Layer32,
}

impl Predictor {
    pub fn new(model: &CnnModel) -> Self {
        Self {
            config: model.config.clone(),
            conv1: pack(&model.conv1.weight, &model.conv1.bias),
            norm1: Norm::new(&model.norm1),
            conv2: pack(&model.conv2.weight, &model.conv2.bias),
            norm2: Norm::new(&model.norm2),
            dense1: pack(&model.dense1.weight, &model.dense1.bias),
            dense2: pack(&model.dense2.weight, &model.dense2.bias),
            output: pack(&model.output.weight, &model.output.bias),
        }
    }

    pub fn config(&self) -> &CnnConfig {
        &self.config
    }

    pub fn predict(&self, x: &FeatureTensor) -> Result<Vec<f64>> {
        let (h, w, c) = self.config.input_shape;
        if x.rows != h || x.cols != w || x.data.len() != h * w * c {
            return Err(Error::Dimension(format!(
                "input {}x{} with {} values, network expects {h}x{w}x{c}",
                x.rows,
                x.cols,
                x.data.len()
            )));
        }
        let input: Vec<f64> = x.data.iter().map(|&v| f64::from(v)).collect();
        let mut a = kernels::conv3(h, w, c, &input, self.conv1.weight(), &self.conv1.bias);
        self.norm1.apply(&mut a);
        let f = self.config.conv_filters;
        let mut a = kernels::conv3(h, w, f, &a, self.conv2.weight(), &self.conv2.bias);
        self.norm2.apply(&mut a);
        let mut r = kernels::dense(&a, self.dense1.weight(), &self.dense1.bias);
        r.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut r = kernels::dense(&r, self.dense2.weight(), &self.dense2.bias);
        r.iter_mut().for_each(|v| *v = v.max(0.0));
        Ok(kernels::dense(&r, self.output.weight(), &self.output.bias))
    }

    /// Channel to features to network output to beamformers.
    pub fn beamformers(&self, fc: &FrequencyChannel, dims: &BeamDims) -> Result<HybridBeamformer> {
        super::check_dims(&self.config, fc, dims)?;
        let z = self.predict(&dataset::build_features(fc))?;
        dataset::reconstruct_beamformers(&z, dims)
    }
}
