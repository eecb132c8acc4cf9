//! Experiment drivers: SNR sweep, CSI-corruption sweep and timing, with CSV
//! output.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamforming::{self, BeamDims, LinkParams};
use crate::channel::{ChannelConfig, FrequencyChannel};
use crate::dataset::{self, DatasetConfig};
use crate::error::{Error, Result};
use crate::manopt::{self, MoSettings};
use crate::network::{CnnConfig, CnnModel, Predictor, TrainConfig};
use crate::rng;

pub const CSV_HEADER: &str = "sweep_db,method,mean_se,std_se,trials";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub channel: ChannelConfig,
    pub n_rf: usize,
    pub n_streams: usize,
    /// SNR used when solving for MO labels.
    #[serde(default = "default_fixed_snr")]
    pub label_snr_db: f64,
    #[serde(default)]
    pub mo: MoSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub n_realizations: usize,
    pub g_copies: usize,
    #[serde(default = "default_train_snrs")]
    pub snr_train_db: Vec<f64>,
    #[serde(default)]
    pub clean_labels: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_filters")]
    pub conv_filters: usize,
    #[serde(default = "default_units")]
    pub fc_units: usize,
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub snr_db: Vec<f64>,
    /// Corruption levels; `inf` means uncorrupted.
    #[serde(default)]
    pub snr_test_db: Vec<f64>,
    /// Link SNR of the corruption sweep.
    #[serde(default = "default_fixed_snr")]
    pub fixed_snr_db: f64,
    #[serde(default = "default_timing_runs")]
    pub timing_runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub dataset: DatasetSection,
    pub train: TrainSection,
    pub sweep: SweepSection,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<String>,
}

fn default_fixed_snr() -> f64 {
    20.0
}
fn default_train_snrs() -> Vec<f64> {
    vec![15.0, 20.0, 25.0]
}
fn default_filters() -> usize {
    16
}
fn default_units() -> usize {
    128
}
fn default_dropout() -> f64 {
    0.5
}
fn default_lr() -> f64 {
    TrainConfig::default().lr
}
fn default_momentum() -> f64 {
    TrainConfig::default().momentum
}
fn default_batch() -> usize {
    TrainConfig::default().batch
}
fn default_epochs() -> usize {
    TrainConfig::default().epochs
}
fn default_val_fraction() -> f64 {
    TrainConfig::default().val_fraction
}
fn default_timing_runs() -> usize {
    20
}
fn default_trials() -> usize {
    20
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.sweep.snr_db.is_empty() && self.sweep.snr_test_db.is_empty() {
            return Err(Error::Config("sweep needs snr_db or snr_test_db points".into()));
        }
        if self.sweep.snr_db.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("snr_db points must be finite".into()));
        }
        if self.sweep.snr_test_db.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
            return Err(Error::Config("snr_test_db points must be finite or inf".into()));
        }
        if self.sweep.timing_runs == 0 {
            return Err(Error::Config("timing_runs must be at least 1".into()));
        }
        self.dataset_config().validate()?;
        self.train_config().validate()?;
        self.cnn_config().validate()
    }

    pub fn dims(&self) -> BeamDims {
        let c = &self.scenario.channel;
        BeamDims {
            n_tx: c.n_tx,
            n_rx: c.n_rx,
            n_rf: self.scenario.n_rf,
            n_streams: self.scenario.n_streams,
            n_subcarriers: c.n_subcarriers,
        }
    }

    pub fn link(&self, snr_db: f64) -> LinkParams {
        LinkParams::from_snr_db(snr_db, self.scenario.n_streams)
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            n_realizations: self.dataset.n_realizations,
            g_copies: self.dataset.g_copies,
            snr_train_db: self.dataset.snr_train_db.clone(),
            channel: self.scenario.channel.clone(),
            link: self.link(self.scenario.label_snr_db),
            n_rf: self.scenario.n_rf,
            mo: self.scenario.mo,
            seed: self.seed,
            clean_labels: self.dataset.clean_labels,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            momentum: t.momentum,
            batch: t.batch,
            epochs: t.epochs,
            val_fraction: t.val_fraction,
            seed: self.seed,
        }
    }

    pub fn cnn_config(&self) -> CnnConfig {
        let t = &self.train;
        CnnConfig::for_dims(&self.dims(), t.conv_filters, t.fc_units, t.dropout_p)
    }

    /// Held-out test channel for trial `j`, independent of the training
    /// realizations.
    pub fn test_channel(&self, trial: usize) -> Result<FrequencyChannel> {
        let mut r = rng::rng_for(self.seed, &[rng::stream::TRIAL_CHANNEL, trial as u64]);
        self.scenario.channel.realize_with(&mut r)
    }

    fn check_model(&self, model: &CnnModel) -> Result<()> {
        let d = self.dims();
        if model.config.input_shape != d.feature_shape() || model.config.output_len != d.label_len() {
            return Err(Error::Dimension(format!(
                "model {:?} -> {} does not match scenario {d:?}",
                model.config.input_shape, model.config.output_len
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Digital,
    Mo,
    Dlhb,
    MoCorrupted,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Digital => "digital",
            Method::Mo => "mo",
            Method::Dlhb => "dlhb",
            Method::MoCorrupted => "mo-corrupted",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub sweep_db: f64,
    pub method: Method,
    pub mean_se: f64,
    pub std_se: f64,
    pub trials: usize,
}

/// Per-trial spectral efficiencies at one sweep point; `None` marks an
/// excluded (failed) evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct PointTrials {
    pub sweep_db: f64,
    pub methods: Vec<Method>,
    /// `values[trial][method]`.
    pub values: Vec<Vec<Option<f64>>>,
}

impl PointTrials {
    pub fn column(&self, method: Method) -> Vec<Option<f64>> {
        let k = self.methods.iter().position(|&m| m == method).expect("method present");
        self.values.iter().map(|v| v[k]).collect()
    }

    fn rows(&self) -> Result<Vec<ResultRow>> {
        let total = self.values.len();
        self.methods
            .iter()
            .map(|&m| {
                let ok: Vec<f64> = self.column(m).into_iter().flatten().collect();
                let excluded = total - ok.len();
                if excluded * 10 > total {
                    return Err(Error::TooManyFailures {
                        failed: excluded,
                        total,
                    });
                }
                let (mean, std) = mean_std(&ok);
                Ok(ResultRow {
                    sweep_db: self.sweep_db,
                    method: m,
                    mean_se: mean,
                    std_se: std,
                    trials: ok.len(),
                })
            })
            .collect()
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn logged<T>(what: &str, trial: usize, r: Result<T>) -> Option<T> {
    r.map_err(|e| log::warn!("trial {trial}: {what} excluded: {e}")).ok()
}

/// MO design on `seen`, evaluated on `truth`. A channel that is identically
/// zero carries no power, so every beamformer scores 0 on it.
pub fn mo_se(seen: &FrequencyChannel, truth: &FrequencyChannel, cfg: &ExperimentConfig, link: &LinkParams) -> Result<f64> {
    if truth.energy() == 0.0 {
        return Ok(0.0);
    }
    let design = manopt::design_hybrid(seen, cfg.scenario.n_rf, link, &cfg.scenario.mo)?;
    beamforming::spectral_efficiency(truth, &design.beamformer, link)
}

/// Network prediction from `seen`, evaluated on `truth`.
pub fn dlhb_se(
    predictor: &Predictor,
    seen: &FrequencyChannel,
    truth: &FrequencyChannel,
    cfg: &ExperimentConfig,
    link: &LinkParams,
) -> Result<f64> {
    if truth.energy() == 0.0 {
        return Ok(0.0);
    }
    let bf = predictor.beamformers(seen, &cfg.dims())?;
    beamforming::spectral_efficiency(truth, &bf, link)
}

/// Per-trial values of the SNR sweep with a caller-supplied channel source.
pub fn snr_sweep_trials_with<S>(cfg: &ExperimentConfig, model: &CnnModel, source: S) -> Result<Vec<PointTrials>>
where
    S: Fn(usize) -> Result<FrequencyChannel> + Sync,
{
    cfg.check_model(model)?;
    let predictor = Predictor::new(model);
    let methods = vec![Method::Digital, Method::Mo, Method::Dlhb];
    let channels: Vec<Option<FrequencyChannel>> = (0..cfg.trials)
        .into_par_iter()
        .map(|j| logged("channel", j, source(j)))
        .collect();
    let mut out = Vec::with_capacity(cfg.sweep.snr_db.len());
    for &snr in &cfg.sweep.snr_db {
        let link = cfg.link(snr);
        let values = channels
            .par_iter()
            .enumerate()
            .map(|(j, fc)| match fc {
                None => vec![None; 3],
                Some(fc) => vec![
                    logged("digital", j, beamforming::digital_spectral_efficiency(fc, &link)),
                    logged("mo", j, mo_se(fc, fc, cfg, &link)),
                    logged("dlhb", j, dlhb_se(&predictor, fc, fc, cfg, &link)),
                ],
            })
            .collect();
        out.push(PointTrials {
            sweep_db: snr,
            methods: methods.clone(),
            values,
        });
    }
    Ok(out)
}

pub fn run_snr_sweep(cfg: &ExperimentConfig, model: &CnnModel) -> Result<Vec<ResultRow>> {
    rows_of(&snr_sweep_trials_with(cfg, model, |j| cfg.test_channel(j))?)
}

/// Per-trial values of the corruption sweep. Methods see the corrupted
/// channel; every spectral efficiency is evaluated on the clean one.
pub fn corruption_sweep_trials_with<S>(
    cfg: &ExperimentConfig,
    model: &CnnModel,
    source: S,
) -> Result<Vec<PointTrials>>
where
    S: Fn(usize) -> Result<FrequencyChannel> + Sync,
{
    cfg.check_model(model)?;
    let predictor = Predictor::new(model);
    let methods = vec![Method::Dlhb, Method::MoCorrupted, Method::Digital];
    let link = cfg.link(cfg.sweep.fixed_snr_db);
    let channels: Vec<Option<FrequencyChannel>> = (0..cfg.trials)
        .into_par_iter()
        .map(|j| logged("channel", j, source(j)))
        .collect();
    let mut out = Vec::with_capacity(cfg.sweep.snr_test_db.len());
    for &snr_test in &cfg.sweep.snr_test_db {
        let values = channels
            .par_iter()
            .enumerate()
            .map(|(j, fc)| match fc {
                None => vec![None; 3],
                Some(fc) => {
                    let mut r = rng::rng_for(cfg.seed, &[rng::stream::TRIAL_CORRUPTION, j as u64]);
                    let seen = dataset::corrupt_channel(fc, snr_test, &mut r);
                    vec![
                        logged("dlhb", j, dlhb_se(&predictor, &seen, fc, cfg, &link)),
                        logged("mo-corrupted", j, mo_se(&seen, fc, cfg, &link)),
                        logged("digital", j, beamforming::digital_spectral_efficiency(fc, &link)),
                    ]
                }
            })
            .collect();
        out.push(PointTrials {
            sweep_db: snr_test,
            methods: methods.clone(),
            values,
        });
    }
    Ok(out)
}

pub fn run_corruption_sweep(cfg: &ExperimentConfig, model: &CnnModel) -> Result<Vec<ResultRow>> {
    rows_of(&corruption_sweep_trials_with(cfg, model, |j| cfg.test_channel(j))?)
}

pub fn rows_of(points: &[PointTrials]) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for p in points {
        rows.extend(p.rows()?);
    }
    Ok(rows)
}

fn fmt_db(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

pub fn to_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(
            s,
            "{},{},{:.6},{:.6},{}",
            fmt_db(r.sweep_db),
            r.method.name(),
            r.mean_se,
            r.std_se,
            r.trials
        )
        .expect("writing to a String");
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingReport {
    pub runs: usize,
    pub dlhb_median_s: f64,
    pub mo_median_s: f64,
}

impl TimingReport {
    /// MO median over DLHB median.
    pub fn speedup(&self) -> f64 {
        self.mo_median_s / self.dlhb_median_s
    }

    pub fn to_csv(&self) -> String {
        format!(
            "method,median_s,runs\ndlhb,{:.9},{}\nmo,{:.9},{}\n",
            self.dlhb_median_s, self.runs, self.mo_median_s, self.runs
        )
    }
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall time of DLHB prediction and of the MO solve on the same
/// instances, after one untimed warm-up of each. Runs serially.
pub fn time_methods(cfg: &ExperimentConfig, model: &CnnModel) -> Result<TimingReport> {
    cfg.check_model(model)?;
    let predictor = Predictor::new(model);
    let runs = cfg.sweep.timing_runs.max(20);
    let link = cfg.link(cfg.sweep.fixed_snr_db);
    let dims = cfg.dims();
    let instances = (0..runs.min(cfg.trials.max(1)))
        .map(|j| cfg.test_channel(j))
        .collect::<Result<Vec<_>>>()?;
    predictor.beamformers(&instances[0], &dims)?;
    manopt::design_hybrid(&instances[0], cfg.scenario.n_rf, &link, &cfg.scenario.mo)?;
    let mut dl = Vec::with_capacity(runs);
    let mut mo = Vec::with_capacity(runs);
    for r in 0..runs {
        let fc = &instances[r % instances.len()];
        let t = Instant::now();
        std::hint::black_box(predictor.beamformers(fc, &dims)?);
        dl.push(t.elapsed().as_secs_f64());
        let t = Instant::now();
        std::hint::black_box(manopt::design_hybrid(fc, cfg.scenario.n_rf, &link, &cfg.scenario.mo)?);
        mo.push(t.elapsed().as_secs_f64());
    }
    Ok(TimingReport {
        runs,
        dlhb_median_s: median(&mut dl),
        mo_median_s: median(&mut mo),
    })
}
