//! Training data: corrupted channel copies, feature tensors, label vectors
//! and the binary dataset file.
//!
//! File layout (little-endian): magic `DLHB`, `u16` version, six `u32`
//! fields `N_T, N_R, N_RF, N_S, M, T`, then `T` records of `f32` values, each
//! a `(M N_R, N_T, 3)` channel-last feature tensor followed by the label.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamforming::{self, BeamDims, HybridBeamformer, LinkParams};
use crate::channel::{ChannelConfig, FrequencyChannel};
use crate::error::{Error, Result};
use crate::manopt::{self, MoSettings};
use crate::numerics::CMat;
use crate::rng::{self, SimRng};

pub const DATASET_MAGIC: &[u8; 4] = b"DLHB";
pub const DATASET_VERSION: u16 = 1;
pub const DATASET_HEADER_LEN: usize = 4 + 2 + 6 * 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_realizations: usize,
    pub g_copies: usize,
    pub snr_train_db: Vec<f64>,
    pub channel: ChannelConfig,
    pub link: LinkParams,
    pub n_rf: usize,
    pub mo: MoSettings,
    pub seed: u64,
    /// Label from the clean channel instead of the corrupted copy.
    pub clean_labels: bool,
}

impl DatasetConfig {
    pub fn dims(&self) -> BeamDims {
        BeamDims {
            n_tx: self.channel.n_tx,
            n_rx: self.channel.n_rx,
            n_rf: self.n_rf,
            n_streams: self.link.n_streams,
            n_subcarriers: self.channel.n_subcarriers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_realizations == 0 || self.g_copies == 0 {
            return Err(Error::Config("n_realizations and g_copies must be at least 1".into()));
        }
        if self.snr_train_db.is_empty() {
            return Err(Error::Config("snr_train_db must not be empty".into()));
        }
        if self.n_rf == 0 || self.n_rf > self.channel.n_tx || self.n_rf > self.channel.n_rx {
            return Err(Error::Config(format!(
                "n_rf = {} must lie in 1..=min(n_tx, n_rx)",
                self.n_rf
            )));
        }
        if self.link.n_streams > self.n_rf {
            return Err(Error::Config("n_streams cannot exceed n_rf".into()));
        }
        self.channel.validate()?;
        self.link.validate()?;
        self.mo.validate()
    }

    pub fn len(&self) -> usize {
        self.n_realizations * self.g_copies
    }

    /// Training SNR of copy `g` (round-robin over the configured levels).
    pub fn snr_for_copy(&self, g: usize) -> f64 {
        self.snr_train_db[g % self.snr_train_db.len()]
    }
}

/// Real tensor `(M N_R, N_T, 3)` stored row-major, channel-last, in single precision.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl FeatureTensor {
    pub const CHANNELS: usize = 3;

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.cols + col) * Self::CHANNELS + ch]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelVector {
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: FeatureTensor,
    pub label: LabelVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dims: BeamDims,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Adds i.i.d. `CN(0, sigma^2)` to every entry, `sigma^2 = P * 10^(-snr_db / 20)`
/// with `P` the mean entry power of the channel. `snr_db = +inf` is a no-op.
pub fn corrupt_channel(fc: &FrequencyChannel, snr_db: f64, rng: &mut SimRng) -> FrequencyChannel {
    if snr_db == f64::INFINITY {
        return fc.clone();
    }
    let variance = corruption_variance(fc, snr_db);
    FrequencyChannel {
        per_subcarrier: fc
            .per_subcarrier
            .iter()
            .map(|h| {
                let data = h.data().iter().map(|&z| z + rng::complex_normal(rng, variance)).collect();
                CMat::from_vec(h.rows(), h.cols(), data).expect("same shape")
            })
            .collect(),
    }
}

pub fn corruption_variance(fc: &FrequencyChannel, snr_db: f64) -> f64 {
    fc.mean_entry_power() * 10f64.powf(-snr_db / 20.0)
}

/// Stacks `(|H|, Re H, Im H)` of each subcarrier vertically.
pub fn build_features(fc: &FrequencyChannel) -> FeatureTensor {
    let (nr, nt) = (fc.n_rx(), fc.n_tx());
    let rows = fc.n_subcarriers() * nr;
    let mut data = Vec::with_capacity(rows * nt * 3);
    for h in &fc.per_subcarrier {
        for i in 0..nr {
            for j in 0..nt {
                let z = h[(i, j)];
                data.push(z.norm() as f32);
                data.push(z.re as f32);
                data.push(z.im as f32);
            }
        }
    }
    FeatureTensor { rows, cols: nt, data }
}

/// Principal value of the argument in `[-pi, pi)`.
pub fn principal_phase(z: Complex64) -> f64 {
    let a = z.arg();
    if a >= PI {
        a - 2.0 * PI
    } else {
        a
    }
}

fn push_col_major(out: &mut Vec<f64>, m: &CMat, f: impl Fn(Complex64) -> f64) {
    for j in 0..m.cols() {
        for i in 0..m.rows() {
            out.push(f(m[(i, j)]));
        }
    }
}

/// `[vec(angle F_RF); vec(angle W_RF); z_BB[1]; ...; z_BB[M]]`, column-major.
pub fn build_labels(bf: &HybridBeamformer) -> LabelVector {
    let dims = bf.dims();
    let mut data = Vec::with_capacity(dims.label_len());
    push_col_major(&mut data, &bf.f_rf, principal_phase);
    push_col_major(&mut data, &bf.w_rf, principal_phase);
    for (f, w) in bf.f_bb.iter().zip(&bf.w_bb) {
        push_col_major(&mut data, f, |z| z.re);
        push_col_major(&mut data, f, |z| z.im);
        push_col_major(&mut data, w, |z| z.re);
        push_col_major(&mut data, w, |z| z.im);
    }
    LabelVector { data }
}

/// Inverse of [`build_labels`], followed by transmit power normalization.
pub fn reconstruct_beamformers(z: &[f64], dims: &BeamDims) -> Result<HybridBeamformer> {
    if z.len() != dims.label_len() {
        return Err(Error::Dimension(format!(
            "label of length {} for dimensions expecting {}",
            z.len(),
            dims.label_len()
        )));
    }
    let mut pos = 0;
    let mut take = |n: usize| {
        let s = &z[pos..pos + n];
        pos += n;
        s
    };
    let phase_mat = |vals: &[f64], rows: usize, cols: usize| {
        CMat::from_fn(rows, cols, |i, j| Complex64::from_polar(1.0, vals[j * rows + i]))
    };
    let complex_mat = |re: &[f64], im: &[f64], rows: usize, cols: usize| {
        CMat::from_fn(rows, cols, |i, j| Complex64::new(re[j * rows + i], im[j * rows + i]))
    };
    let (nt, nr, nrf, ns) = (dims.n_tx, dims.n_rx, dims.n_rf, dims.n_streams);
    let f_rf = phase_mat(take(nt * nrf), nt, nrf);
    let w_rf = phase_mat(take(nr * nrf), nr, nrf);
    let mut f_bb = Vec::with_capacity(dims.n_subcarriers);
    let mut w_bb = Vec::with_capacity(dims.n_subcarriers);
    for _ in 0..dims.n_subcarriers {
        let fre = take(nrf * ns);
        let fim = take(nrf * ns);
        f_bb.push(complex_mat(fre, fim, nrf, ns));
        let wre = take(nrf * ns);
        let wim = take(nrf * ns);
        w_bb.push(complex_mat(wre, wim, nrf, ns));
    }
    let f_bb = beamforming::normalize_power(&f_rf, &f_bb)?;
    Ok(HybridBeamformer { f_rf, w_rf, f_bb, w_bb })
}

/// MO labels for one (possibly corrupted) channel.
pub fn label_for_channel(
    fc: &FrequencyChannel,
    n_rf: usize,
    link: &LinkParams,
    mo: &MoSettings,
) -> Result<LabelVector> {
    let mut design = manopt::design_hybrid(fc, n_rf, link, mo)?;
    design.beamformer.canonicalize_phases();
    let mut label = build_labels(&design.beamformer);
    // Stored in single precision; round now so memory and file agree.
    for v in &mut label.data {
        *v = *v as f32 as f64;
    }
    Ok(label)
}

/// Runs the data generation loop over `N` realizations and `G` corrupted copies.
pub fn generate(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let total = config.len();
    let per_realization: Vec<Vec<Result<Sample>>> = (0..config.n_realizations)
        .into_par_iter()
        .map(|n| {
            let mut crng = rng::rng_for(config.seed, &[rng::stream::CHANNEL, n as u64]);
            let clean = match config.channel.realize_with(&mut crng) {
                Ok(c) => c,
                Err(e) => return vec![Err(e)],
            };
            (0..config.g_copies)
                .map(|g| {
                    let mut nrng = rng::rng_for(
                        config.seed,
                        &[rng::stream::CORRUPTION, n as u64, g as u64],
                    );
                    let noisy = corrupt_channel(&clean, config.snr_for_copy(g), &mut nrng);
                    let target = if config.clean_labels { &clean } else { &noisy };
                    let label = label_for_channel(target, config.n_rf, &config.link, &config.mo)?;
                    Ok(Sample {
                        features: build_features(&noisy),
                        label,
                    })
                })
                .collect()
        })
        .collect();

    let mut samples = Vec::with_capacity(total);
    let mut failed = 0;
    for (n, group) in per_realization.into_iter().enumerate() {
        for (g, s) in group.into_iter().enumerate() {
            match s {
                Ok(s) => samples.push(s),
                Err(e) => {
                    failed += 1;
                    log::warn!("skipping sample (n = {n}, g = {g}): {e}");
                }
            }
        }
    }
    if failed * 100 > total {
        return Err(Error::TooManyFailures { failed, total });
    }
    Ok(Dataset {
        dims: config.dims(),
        samples,
    })
}

/// Serializes a dataset to bytes in the file layout.
pub fn to_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    let d = ds.dims;
    let (flen, llen) = (d.feature_len(), d.label_len());
    let mut out = Vec::with_capacity(DATASET_HEADER_LEN + ds.len() * 4 * (flen + llen));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for v in [d.n_tx, d.n_rx, d.n_rf, d.n_streams, d.n_subcarriers, ds.len()] {
        out.extend_from_slice(&u32_of(v)?.to_le_bytes());
    }
    for (t, s) in ds.samples.iter().enumerate() {
        if s.features.data.len() != flen || s.label.data.len() != llen {
            return Err(Error::Dimension(format!(
                "sample {t} has {} features / {} labels, expected {flen} / {llen}",
                s.features.data.len(),
                s.label.data.len()
            )));
        }
        for &v in &s.features.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &v in &s.label.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn u32_of(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Invalid(format!("{v} does not fit in u32")))
}

pub fn save(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(ds)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    from_bytes(&std::fs::read(path)?)
}

/// Little-endian reader that reports the byte offset of every failure.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format {
            offset: self.pos as u64,
            msg: format!("{what} length overflows"),
        })?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!("{} trailing bytes", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Dataset> {
    let mut cur = Cursor::new(buf);
    let magic = cur.take(4, "magic")?;
    if magic != DATASET_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad magic {magic:?}, expected {DATASET_MAGIC:?}"),
        });
    }
    let version = cur.u16("version")?;
    if version != DATASET_VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported dataset version {version}"),
        });
    }
    let mut fields = [0usize; 6];
    for (f, name) in fields
        .iter_mut()
        .zip(["n_tx", "n_rx", "n_rf", "n_streams", "n_subcarriers", "length"])
    {
        *f = cur.u32(name)? as usize;
    }
    let dims = BeamDims {
        n_tx: fields[0],
        n_rx: fields[1],
        n_rf: fields[2],
        n_streams: fields[3],
        n_subcarriers: fields[4],
    };
    if fields[..5].contains(&0) {
        return Err(Error::Format {
            offset: 6,
            msg: format!("zero dimension in header {dims:?}"),
        });
    }
    let t = fields[5];
    let (flen, llen) = (dims.feature_len(), dims.label_len());
    let expected = (t as u128) * 4 * (flen + llen) as u128;
    let available = (buf.len() - DATASET_HEADER_LEN) as u128;
    if expected != available {
        return Err(Error::Format {
            offset: cur.offset(),
            msg: format!("header promises {expected} payload bytes, file has {available}"),
        });
    }
    let (rows, cols, _) = dims.feature_shape();
    let mut samples = Vec::with_capacity(t);
    for i in 0..t {
        let features = cur.f32s(flen, &format!("features of record {i}"))?;
        let label = cur.f32s(llen, &format!("label of record {i}"))?;
        samples.push(Sample {
            features: FeatureTensor {
                rows,
                cols,
                data: features,
            },
            label: LabelVector {
                data: label.into_iter().map(f64::from).collect(),
            },
        });
    }
    cur.finish()?;
    Ok(Dataset { dims, samples })
}
