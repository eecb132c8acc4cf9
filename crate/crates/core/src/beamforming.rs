//! Reference beamformers and spectral-efficiency evaluation.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::FrequencyChannel;
use crate::error::{Error, Result};
use crate::numerics::{self, CMat};

/// Array and stream dimensions shared by beamformers, labels and datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamDims {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_rf: usize,
    pub n_streams: usize,
    pub n_subcarriers: usize,
}

impl BeamDims {
    /// `N_RF (N_T + N_R) + 4 M N_S N_RF`.
    pub fn label_len(&self) -> usize {
        self.n_rf * (self.n_tx + self.n_rx)
            + 4 * self.n_subcarriers * self.n_streams * self.n_rf
    }

    /// Feature tensor shape `(M N_R, N_T, 3)`.
    pub fn feature_shape(&self) -> (usize, usize, usize) {
        (self.n_subcarriers * self.n_rx, self.n_tx, 3)
    }

    pub fn feature_len(&self) -> usize {
        let (h, w, c) = self.feature_shape();
        h * w * c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    /// Average received power (linear).
    pub rho: f64,
    /// Noise variance (linear).
    pub noise_var: f64,
    pub n_streams: usize,
}

impl LinkParams {
    /// `rho = 10^(snr/10)` with unit noise variance.
    pub fn from_snr_db(snr_db: f64, n_streams: usize) -> Self {
        Self {
            rho: 10f64.powf(snr_db / 10.0),
            noise_var: 1.0,
            n_streams,
        }
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * (self.rho / self.noise_var).log10()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !(self.noise_var > 0.0) || self.n_streams == 0 {
            return Err(Error::Config(format!(
                "link parameters need rho > 0, noise_var > 0, n_streams >= 1 (got {self:?})"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridBeamformer {
    pub f_rf: CMat,
    pub w_rf: CMat,
    pub f_bb: Vec<CMat>,
    pub w_bb: Vec<CMat>,
}

impl HybridBeamformer {
    pub fn dims(&self) -> BeamDims {
        BeamDims {
            n_tx: self.f_rf.rows(),
            n_rx: self.w_rf.rows(),
            n_rf: self.f_rf.cols(),
            n_streams: self.f_bb.first().map_or(0, CMat::cols),
            n_subcarriers: self.f_bb.len(),
        }
    }

    /// Checks unit-modulus analog stages, shapes and the transmit power budget.
    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        let shapes_ok = self.w_rf.cols() == d.n_rf
            && self.w_bb.len() == d.n_subcarriers
            && self.f_bb.iter().all(|b| b.shape() == (d.n_rf, d.n_streams))
            && self.w_bb.iter().all(|b| b.shape() == (d.n_rf, d.n_streams));
        if !shapes_ok {
            return Err(Error::Dimension(format!("inconsistent beamformer shapes for {d:?}")));
        }
        for (name, m) in [("f_rf", &self.f_rf), ("w_rf", &self.w_rf)] {
            if let Some(z) = m.data().iter().find(|z| (z.norm() - 1.0).abs() > 1e-12) {
                return Err(Error::Invalid(format!(
                    "{name} entry has modulus {} instead of 1",
                    z.norm()
                )));
            }
        }
        let power = transmit_power(&self.f_rf, &self.f_bb);
        let target = (d.n_subcarriers * d.n_streams) as f64;
        if (power - target).abs() > 1e-9 * target {
            return Err(Error::Invalid(format!(
                "transmit power {power} differs from M N_S = {target}"
            )));
        }
        Ok(())
    }

    /// Rotates every analog column so its first entry is real positive and
    /// counter-rotates the matching baseband rows. The products
    /// `F_RF F_BB[m]` and `W_RF W_BB[m]` are unchanged.
    pub fn canonicalize_phases(&mut self) {
        fn fix(rf: &mut CMat, bb: &mut [CMat]) {
            for j in 0..rf.cols() {
                let lead = rf[(0, j)];
                let mag = lead.norm();
                if mag == 0.0 {
                    continue;
                }
                let rot = lead.conj() / mag;
                for i in 0..rf.rows() {
                    rf[(i, j)] = unit(rf[(i, j)] * rot);
                }
                for b in bb.iter_mut() {
                    for k in 0..b.cols() {
                        b[(j, k)] /= rot;
                    }
                }
            }
        }
        fix(&mut self.f_rf, &mut self.f_bb);
        fix(&mut self.w_rf, &mut self.w_bb);
    }
}

fn unit(z: Complex64) -> Complex64 {
    z / z.norm()
}

/// `sum_m ||f_rf f_bb[m]||_F^2`.
pub fn transmit_power(f_rf: &CMat, f_bb: &[CMat]) -> f64 {
    f_bb.iter().map(|b| (f_rf * b).norm_sqr()).sum()
}

/// The `n_streams` dominant right singular vectors of `h`.
pub fn optimal_precoder(h: &CMat, n_streams: usize) -> Result<CMat> {
    let s = numerics::svd(h)?;
    if n_streams == 0 || n_streams > s.singulars.len() {
        return Err(Error::Dimension(format!(
            "{n_streams} streams for a {}x{} channel",
            h.rows(),
            h.cols()
        )));
    }
    let smax = s.singulars[0];
    let skept = s.singulars[n_streams - 1];
    if !(skept > 1e-10 * smax) {
        return Err(Error::RankDeficient(format!(
            "channel rank below {n_streams} streams (sigma_{n_streams} = {skept:.3e}, sigma_1 = {smax:.3e})"
        )));
    }
    Ok(s.right.col_block(0, n_streams))
}

/// Per-subcarrier optimal precoders, failing with the index of the first deficient subcarrier.
pub fn optimal_precoders(fc: &FrequencyChannel, n_streams: usize) -> Result<Vec<CMat>> {
    fc.per_subcarrier
        .iter()
        .enumerate()
        .map(|(k, h)| {
            optimal_precoder(h, n_streams).map_err(|e| match e {
                Error::RankDeficient(msg) => {
                    Error::RankDeficient(format!("subcarrier {}: {msg}", k + 1))
                }
                other => other,
            })
        })
        .collect()
}

/// MMSE combiner `W` whose adjoint is
/// `(1/rho) (F^H H^H H F + (N_S sigma^2 / rho) I)^-1 F^H H^H`.
pub fn mmse_combiner(h: &CMat, f_opt: &CMat, link: &LinkParams) -> Result<CMat> {
    link.validate()?;
    if h.cols() != f_opt.rows() {
        return Err(Error::Dimension(format!(
            "channel {}x{} with precoder {}x{}",
            h.rows(),
            h.cols(),
            f_opt.rows(),
            f_opt.cols()
        )));
    }
    let ns = f_opt.cols();
    let g = h * f_opt;
    let load = ns as f64 * link.noise_var / link.rho;
    let normal = &g.adjoint_mul(&g) + &CMat::identity(ns).scale(load);
    let wh = numerics::solve_hpd(&normal.hermitian_part(), &g.adjoint())?;
    Ok(wh.adjoint().scale(1.0 / link.rho))
}

/// `Lambda_y = rho H F_RF F_BB F_BB^H F_RF^H H^H + sigma^2 I`.
pub fn output_covariance(h: &CMat, f_rf: &CMat, f_bb: &CMat, link: &LinkParams) -> Result<CMat> {
    if h.cols() != f_rf.rows() || f_rf.cols() != f_bb.rows() {
        return Err(Error::Dimension("output_covariance: inconsistent shapes".into()));
    }
    let g = &(h * f_rf) * f_bb;
    let gg = &g * &g.adjoint();
    let out = &gg.scale(link.rho) + &CMat::identity(h.rows()).scale(link.noise_var);
    Ok(out.hermitian_part())
}

/// Rate of one subcarrier for an effective precoder `f` (N_T x N_S) and combiner `w` (N_R x N_S).
pub fn subcarrier_rate(h: &CMat, f: &CMat, w: &CMat, link: &LinkParams) -> Result<f64> {
    if h.shape() != (w.rows(), f.rows()) || f.cols() != w.cols() {
        return Err(Error::Dimension(format!(
            "rate: channel {:?}, precoder {:?}, combiner {:?}",
            h.shape(),
            f.shape(),
            w.shape()
        )));
    }
    let ns = link.n_streams as f64;
    let noise = w.adjoint_mul(w).scale(link.noise_var).hermitian_part();
    let l = numerics::cholesky(&noise).map_err(|e| {
        Error::RankDeficient(format!("noise covariance of the combiner is singular ({e})"))
    })?;
    let heff = w.adjoint_mul(&(h * f));
    // det(I + Ln^-1 B) = det(I + L^-1 B L^-H) with Ln = L L^H.
    let c = numerics::solve_lower(&l, &heff);
    let arg = &CMat::identity(f.cols()) + &(&c * &c.adjoint()).scale(link.rho / ns);
    let rate = numerics::logdet2_hpd(&arg.hermitian_part())?;
    Ok(rate.max(0.0))
}

/// Average spectral efficiency `(1/M) sum_m R[m]` in bits/s/Hz.
///
/// Unit modulus of the analog stages is not enforced here, so unconstrained
/// beamformers can be evaluated through the same path.
pub fn spectral_efficiency(
    fc: &FrequencyChannel,
    bf: &HybridBeamformer,
    link: &LinkParams,
) -> Result<f64> {
    link.validate()?;
    let m = fc.n_subcarriers();
    if bf.f_bb.len() != m || bf.w_bb.len() != m {
        return Err(Error::Dimension(format!(
            "{m} subcarriers but {} / {} baseband stages",
            bf.f_bb.len(),
            bf.w_bb.len()
        )));
    }
    let mut total = 0.0;
    for (k, h) in fc.per_subcarrier.iter().enumerate() {
        let f = &bf.f_rf * &bf.f_bb[k];
        let w = &bf.w_rf * &bf.w_bb[k];
        total += subcarrier_rate(h, &f, &w, link)?;
    }
    Ok(total / m as f64)
}

/// Fully digital SVD beamforming with equal power per stream.
pub fn digital_spectral_efficiency(fc: &FrequencyChannel, link: &LinkParams) -> Result<f64> {
    link.validate()?;
    let ns = link.n_streams;
    let mut total = 0.0;
    for h in &fc.per_subcarrier {
        let s = numerics::svd(h)?;
        if ns > s.singulars.len() {
            return Err(Error::Dimension(format!(
                "{ns} streams for a {}x{} channel",
                h.rows(),
                h.cols()
            )));
        }
        total += s.singulars[..ns]
            .iter()
            .map(|sig| (1.0 + link.rho * sig * sig / (ns as f64 * link.noise_var)).log2())
            .sum::<f64>();
    }
    Ok(total / fc.n_subcarriers() as f64)
}

/// Scales all baseband precoders by one scalar so that the total transmit
/// power is `M N_S`.
pub fn normalize_power(f_rf: &CMat, f_bb: &[CMat]) -> Result<Vec<CMat>> {
    let Some(first) = f_bb.first() else {
        return Err(Error::Invalid("no baseband precoders to normalize".into()));
    };
    let target = (f_bb.len() * first.cols()) as f64;
    let power = transmit_power(f_rf, f_bb);
    if !(power > 0.0) || !power.is_finite() {
        return Err(Error::Invalid(format!(
            "cannot normalize transmit power {power}"
        )));
    }
    let c = (target / power).sqrt();
    Ok(f_bb.iter().map(|b| b.scale(c)).collect())
}
