use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{checksum, CnnConfig, CnnModel, Mode};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub epochs: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            momentum: 0.9,
            batch: 128,
            epochs: 100,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr = {} must be finite and non-negative", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum = {} outside [0, 1)", self.momentum)));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::Config("batch and epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction = {} outside [0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean train-mode loss over each epoch's batches.
    pub train_loss: Vec<f64>,
    /// Infer-mode loss on the validation split; `None` without a split.
    pub val_loss: Vec<Option<f64>>,
    /// Zero-based epoch whose weights were returned.
    pub best_epoch: usize,
    pub wall_time_s: f64,
    /// SHA-256 of the saved model bytes, hex encoded.
    pub checksum: String,
}

/// Seeded shuffle of `0..t`; the first `ceil((1 - val_fraction) t)` indices
/// train, the rest validate.
pub fn split_indices(t: usize, cfg: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..t).collect();
    idx.shuffle(&mut rng::rng_for(cfg.seed, &[rng::stream::SPLIT]));
    let n_train = (((1.0 - cfg.val_fraction) * t as f64).ceil() as usize).clamp(t.min(1), t);
    let val = idx.split_off(n_train);
    (idx, val)
}

fn mean_loss(model: &CnnModel, ds: &Dataset, idx: &[usize], chunk: usize) -> Result<f64> {
    let mut total = 0.0;
    for part in idx.chunks(chunk) {
        let xs: Vec<_> = part.iter().map(|&i| &ds.samples[i].features).collect();
        let cache = model.forward_batch(&xs, Mode::Infer, None)?;
        for (y, &i) in cache.output.iter().zip(part) {
            total += super::loss(y, &ds.samples[i].label.data)?;
        }
    }
    Ok(total / idx.len() as f64)
}

/// Mini-batch SGD with momentum on the MSE loss. Returns the weights of the
/// epoch with the lowest validation loss (the last epoch without a
/// validation split), rounded to single precision.
pub fn train(ds: &Dataset, cfg: &TrainConfig, net: &CnnConfig) -> Result<(CnnModel, TrainReport)> {
    cfg.validate()?;
    net.validate()?;
    if ds.is_empty() {
        return Err(Error::Invalid("cannot train on an empty dataset".into()));
    }
    if ds.dims.feature_shape() != net.input_shape || ds.dims.label_len() != net.output_len {
        return Err(Error::Dimension(format!(
            "dataset {:?} does not match network {:?} -> {}",
            ds.dims, net.input_shape, net.output_len
        )));
    }
    let start = Instant::now();
    let (mut train_idx, val_idx) = split_indices(ds.len(), cfg);
    let batch = cfg.batch.min(train_idx.len());
    let mut model = CnnModel::new(net.clone(), cfg.seed)?;
    let mut velocity: Vec<Vec<f64>> = model.params().iter().map(|(_, p)| vec![0.0; p.len()]).collect();
    let mut report = TrainReport {
        train_loss: Vec::with_capacity(cfg.epochs),
        val_loss: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        wall_time_s: 0.0,
        checksum: String::new(),
    };
    let mut best: Option<(f64, CnnModel)> = None;

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng::rng_for(cfg.seed, &[rng::stream::SHUFFLE, epoch as u64]));
        let mut epoch_total = 0.0;
        for (b, part) in train_idx.chunks(batch).enumerate() {
            let xs: Vec<_> = part.iter().map(|&i| &ds.samples[i].features).collect();
            let ts: Vec<&[f64]> = part.iter().map(|&i| &ds.samples[i].label.data[..]).collect();
            let mut drng = rng::rng_for(cfg.seed, &[rng::stream::DROPOUT, epoch as u64, b as u64]);
            let cache = model.forward_batch(&xs, Mode::Train, Some(&mut drng))?;
            let (l, grads) = model.backward(&cache, &ts)?;
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            epoch_total += l * part.len() as f64;
            model.update_running_stats(&cache);
            for ((w, v), g) in model.params_mut().into_iter().zip(&mut velocity).zip(&grads.tensors) {
                for ((w, v), g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
                    *v = cfg.momentum * *v - cfg.lr * g;
                    *w += *v;
                }
            }
        }
        let train_loss = epoch_total / train_idx.len() as f64;
        report.train_loss.push(train_loss);
        let val = if val_idx.is_empty() {
            None
        } else {
            let v = mean_loss(&model, ds, &val_idx, batch)?;
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: 0 });
            }
            Some(v)
        };
        report.val_loss.push(val);
        log::info!("epoch {epoch}: train {train_loss:.6e}, validation {val:?}");
        if let Some(v) = val {
            if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
                best = Some((v, model.clone()));
                report.best_epoch = epoch;
            }
        }
    }

    let mut model = match best {
        Some((_, m)) => m,
        None => {
            report.best_epoch = cfg.epochs - 1;
            model
        }
    };
    model.quantize_f32();
    report.checksum = checksum(&model)?;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((model, report))
}
