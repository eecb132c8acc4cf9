//! Optimization over matrices with unit-modulus entries (the complex circle
//! manifold), and the alternating precoder/combiner fits built on it.
//!
//! The analog stage is updated by Riemannian steepest descent with Armijo
//! backtracking; the digital stage is solved in closed form between analog
//! updates.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::beamforming::{self, HybridBeamformer, LinkParams};
use crate::channel::FrequencyChannel;
use crate::error::{Error, Result};
use crate::numerics::{self, CMat};
use crate::rng;

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoSettings {
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub grad_tol: f64,
    pub obj_tol: f64,
    pub step_init: f64,
    pub seed: u64,
}

impl Default for MoSettings {
    fn default() -> Self {
        Self {
            outer_iters: 10,
            inner_iters: 50,
            grad_tol: 1e-6,
            obj_tol: 1e-6,
            step_init: 1.0,
            seed: 0,
        }
    }
}

impl MoSettings {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iters == 0 || self.inner_iters == 0 {
            return Err(Error::Config("MO iteration counts must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0 && self.obj_tol > 0.0 && self.step_init > 0.0) {
            return Err(Error::Config("MO tolerances and step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    GradTol,
    ObjTol,
    MaxIters,
    LineSearch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoReport {
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iters_used: usize,
    pub stop: StopReason,
}

impl MoReport {
    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }

    /// Largest per-step increase along the trace (non-positive when monotone).
    pub fn max_increase(&self) -> f64 {
        self.objective_trace
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Projects a Euclidean gradient onto the tangent space at `x`:
/// `g - Re{g .* conj(x)} .* x`.
pub fn tangent_project(egrad: &CMat, x: &CMat) -> CMat {
    assert_eq!(egrad.shape(), x.shape(), "tangent_project: shape mismatch");
    let data = egrad
        .data()
        .iter()
        .zip(x.data())
        .map(|(&g, &xi)| g - xi * (g * xi.conj()).re)
        .collect();
    CMat::from_vec(x.rows(), x.cols(), data).expect("same shape")
}

/// Entrywise normalization of `x + v`.
pub fn retract(x: &CMat, v: &CMat) -> Result<CMat> {
    assert_eq!(v.shape(), x.shape(), "retract: shape mismatch");
    let mut out = Vec::with_capacity(x.data().len());
    for (k, (&xi, &vi)) in x.data().iter().zip(v.data()).enumerate() {
        let s = xi + vi;
        let n = s.norm();
        if n < 1e-14 {
            return Err(Error::DegenerateStep {
                row: k / x.cols(),
                col: k % x.cols(),
            });
        }
        out.push(s / n);
    }
    CMat::from_vec(x.rows(), x.cols(), out)
}

/// `||a - x b||_F^2`.
pub fn fit_objective(a: &CMat, x: &CMat, b: &CMat) -> f64 {
    (a - &(x * b)).norm_sqr()
}

/// Euclidean (Wirtinger, real-inner-product) gradient `-2 (a - x b) b^H`.
pub fn fit_egrad(a: &CMat, x: &CMat, b: &CMat) -> CMat {
    let r = a - &(x * b);
    (&r * &b.adjoint()).scale(-2.0)
}

/// Matrix with i.i.d. uniform phases on `[0, 2 pi)`.
pub fn random_unit_modulus(rows: usize, cols: usize, seed: u64, path: &[u64]) -> CMat {
    let mut full = vec![rng::stream::MO_INIT];
    full.extend_from_slice(path);
    let mut r = rng::rng_for(seed, &full);
    CMat::from_fn(rows, cols, |_, _| Complex64::from_polar(1.0, 2.0 * PI * r.random::<f64>()))
}

/// Minimizes `||a - x b||_F^2` over unit-modulus `x`, starting at `x0`.
pub fn fit_analog(a: &CMat, b: &CMat, x0: &CMat, settings: &MoSettings) -> Result<(CMat, MoReport)> {
    if a.rows() != x0.rows() || b.rows() != x0.cols() || a.cols() != b.cols() {
        return Err(Error::Dimension(format!(
            "fit_analog: a {:?}, b {:?}, x0 {:?}",
            a.shape(),
            b.shape(),
            x0.shape()
        )));
    }
    descend(
        x0,
        settings.inner_iters,
        settings,
        |x| Ok(fit_objective(a, x, b)),
        |x| Ok(fit_egrad(a, x, b)),
    )
}

/// Riemannian steepest descent with Armijo backtracking from `x0`.
fn descend<F, G>(x0: &CMat, max_iters: usize, settings: &MoSettings, objective: F, egrad: G) -> Result<(CMat, MoReport)>
where
    F: Fn(&CMat) -> Result<f64>,
    G: Fn(&CMat) -> Result<CMat>,
{
    let mut x = x0.clone();
    let mut f = objective(&x)?;
    let mut trace = vec![f];
    let mut step = settings.step_init;
    let mut stop = StopReason::MaxIters;
    let mut iters = 0;

    for _ in 0..max_iters {
        let rgrad = tangent_project(&egrad(&x)?, &x);
        let gnorm2 = rgrad.norm_sqr();
        if gnorm2.sqrt() < settings.grad_tol {
            stop = StopReason::GradTol;
            break;
        }
        let mut t = step;
        let mut accepted = None;
        let mut halvings = 0;
        while halvings <= MAX_HALVINGS {
            let cand = retract(&x, &rgrad.scale(-t))?;
            let fc = objective(&cand)?;
            if fc <= f - ARMIJO * t * gnorm2 {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
            halvings += 1;
        }
        let Some((mut cand, mut fc)) = accepted else {
            stop = StopReason::LineSearch;
            break;
        };
        // Keep halving while the objective still improves.
        while halvings < MAX_HALVINGS {
            let half = retract(&x, &rgrad.scale(-0.5 * t))?;
            let fh = objective(&half)?;
            if fh >= fc {
                break;
            }
            cand = half;
            fc = fh;
            t *= 0.5;
            halvings += 1;
        }
        // Warm start the next search one doubling above the accepted step.
        step = 2.0 * t;
        let decrease = f - fc;
        debug_assert!(
            cand.data().iter().all(|z| (z.norm() - 1.0).abs() <= 1e-12),
            "iterate left the unit-modulus manifold"
        );
        x = cand;
        f = fc;
        trace.push(f);
        iters += 1;
        if decrease <= settings.obj_tol * f.max(f64::MIN_POSITIVE) {
            stop = StopReason::ObjTol;
            break;
        }
    }
    let converged = matches!(stop, StopReason::GradTol | StopReason::ObjTol);
    Ok((
        x,
        MoReport {
            objective_trace: trace,
            converged,
            iters_used: iters,
            stop,
        },
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrecoderDesign {
    pub f_rf: CMat,
    pub f_bb: Vec<CMat>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CombinerDesign {
    pub w_rf: CMat,
    pub w_bb: Vec<CMat>,
}

fn initial_failure(rep: &MoReport) -> bool {
    rep.stop == StopReason::LineSearch && rep.iters_used == 0
}

/// Fits `F_RF [F_BB[1], ..., F_BB[M]]` to `[F_opt[1], ..., F_opt[M]]` and
/// normalizes the result to total power `M N_S`.
pub fn solve_precoder(
    f_opt_all: &CMat,
    n_streams: usize,
    n_rf: usize,
    settings: &MoSettings,
) -> Result<(PrecoderDesign, MoReport)> {
    settings.validate()?;
    if n_streams == 0 || f_opt_all.cols() % n_streams != 0 {
        return Err(Error::Dimension(format!(
            "{} precoder columns are not a multiple of {n_streams} streams",
            f_opt_all.cols()
        )));
    }
    match precoder_attempt(f_opt_all, n_streams, n_rf, settings, settings.seed)? {
        Some(out) => Ok(out),
        None => {
            let seed = settings.seed.wrapping_add(1);
            log::warn!("precoder line search failed at the initial point, reseeding with {seed}");
            precoder_attempt(f_opt_all, n_streams, n_rf, settings, seed)?
                .ok_or(Error::LineSearch { seed })
        }
    }
}

fn precoder_attempt(
    target: &CMat,
    n_streams: usize,
    n_rf: usize,
    settings: &MoSettings,
    seed: u64,
) -> Result<Option<(PrecoderDesign, MoReport)>> {
    let mut x = random_unit_modulus(target.rows(), n_rf, seed, &[0]);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut outer = 0;
    let mut stop = StopReason::MaxIters;
    let mut bb = numerics::lstsq(&x, target)?;
    trace.push(fit_objective(target, &x, &bb));

    while outer < settings.outer_iters {
        let prev = *trace.last().expect("nonempty");
        let (cand, rep) = fit_analog(target, &bb, &x, settings)?;
        if outer == 0 && initial_failure(&rep) {
            return Ok(None);
        }
        x = cand;
        trace.push(rep.final_objective());
        bb = numerics::lstsq(&x, target)?;
        let f = fit_objective(target, &x, &bb);
        trace.push(f);
        outer += 1;
        if prev - f <= settings.obj_tol * prev.max(f64::MIN_POSITIVE) {
            converged = true;
            stop = StopReason::ObjTol;
            break;
        }
    }

    let blocks = bb.split_cols(n_streams);
    let f_bb = beamforming::normalize_power(&x, &blocks)?;
    Ok(Some((
        PrecoderDesign { f_rf: x, f_bb },
        MoReport {
            objective_trace: trace,
            converged,
            iters_used: outer,
            stop,
        },
    )))
}

/// `W_BB[m] = (W_RF^H Ly[m] W_RF)^-1 W_RF^H Ly[m] W_MMSE[m]`.
pub fn combiner_baseband(w_rf: &CMat, lambdas: &[CMat], w_mmse: &[CMat]) -> Result<Vec<CMat>> {
    lambdas
        .iter()
        .zip(w_mmse)
        .map(|(ly, wm)| {
            let lw = ly * w_rf;
            let gram = w_rf.adjoint_mul(&lw).hermitian_part();
            let rhs = lw.adjoint_mul(wm);
            numerics::solve_hpd(&gram, &rhs).map_err(|e| {
                Error::NotPositiveDefinite(format!("W_RF^H Lambda_y W_RF is singular ({e})"))
            })
        })
        .collect()
}

/// Fits the hybrid combiner to the MMSE combiners with the closed-form
/// covariance-weighted baseband stage.
pub fn solve_combiner(
    w_mmse_all: &CMat,
    lambdas: &[CMat],
    n_rf: usize,
    settings: &MoSettings,
) -> Result<(CombinerDesign, MoReport)> {
    settings.validate()?;
    let m = lambdas.len();
    if m == 0 || w_mmse_all.cols() % m != 0 {
        return Err(Error::Dimension(format!(
            "{} combiner columns for {m} covariance matrices",
            w_mmse_all.cols()
        )));
    }
    let n_r = w_mmse_all.rows();
    if lambdas.iter().any(|l| l.shape() != (n_r, n_r)) {
        return Err(Error::Dimension("covariance shape does not match N_R".into()));
    }
    match combiner_attempt(w_mmse_all, lambdas, n_rf, settings, settings.seed)? {
        Some(out) => Ok(out),
        None => {
            let seed = settings.seed.wrapping_add(1);
            log::warn!("combiner line search failed at the initial point, reseeding with {seed}");
            combiner_attempt(w_mmse_all, lambdas, n_rf, settings, seed)?
                .ok_or(Error::LineSearch { seed })
        }
    }
}

/// `sum_m ||W_MMSE[m] - W_RF W_BB[m]||_F^2` with the closed-form `W_BB`.
pub fn combiner_objective(w_rf: &CMat, lambdas: &[CMat], w_mmse: &[CMat]) -> Result<f64> {
    let bb = combiner_baseband(w_rf, lambdas, w_mmse)?;
    Ok(w_mmse.iter().zip(&bb).map(|(w, b)| fit_objective(w, w_rf, b)).sum())
}

/// Euclidean gradient of [`combiner_objective`], including the dependence of
/// `W_BB` on `W_RF`. With `r = W_MMSE - W_RF W_BB` and `P = W_RF G^-1`,
/// `G = W_RF^H Ly W_RF`, each subcarrier adds
/// `-2 r W_BB^H - 2 Ly r r^H P + 2 Ly W_RF P^H r W_BB^H`.
pub fn combiner_egrad(w_rf: &CMat, lambdas: &[CMat], w_mmse: &[CMat]) -> Result<CMat> {
    let mut grad = CMat::zeros(w_rf.rows(), w_rf.cols());
    for (ly, wm) in lambdas.iter().zip(w_mmse) {
        let lx = ly * w_rf;
        let gram = w_rf.adjoint_mul(&lx).hermitian_part();
        let bb = numerics::solve_hpd(&gram, &lx.adjoint_mul(wm))?;
        let p_adj = numerics::solve_hpd(&gram, &w_rf.adjoint())?;
        let r = wm - &(w_rf * &bb);
        let rb = &r * &bb.adjoint();
        let lr = ly * &r;
        let term2 = &lr * &(&r.adjoint() * &p_adj.adjoint());
        let term3 = &lx * &(&p_adj * &rb);
        grad = &grad + &(&(&term3 - &term2) - &rb).scale(2.0);
    }
    Ok(grad)
}

fn combiner_attempt(
    target: &CMat,
    lambdas: &[CMat],
    n_rf: usize,
    settings: &MoSettings,
    seed: u64,
) -> Result<Option<(CombinerDesign, MoReport)>> {
    let n_s = target.cols() / lambdas.len();
    let w_mmse = target.split_cols(n_s);
    let x0 = random_unit_modulus(target.rows(), n_rf, seed, &[1]);
    let (x, rep) = descend(
        &x0,
        settings.outer_iters * settings.inner_iters,
        settings,
        |x| combiner_objective(x, lambdas, &w_mmse),
        |x| combiner_egrad(x, lambdas, &w_mmse),
    )?;
    if initial_failure(&rep) {
        return Ok(None);
    }
    let w_bb = combiner_baseband(&x, lambdas, &w_mmse)?;
    Ok(Some((CombinerDesign { w_rf: x, w_bb }, rep)))
}

/// Full decoupled MO design on one channel: SVD precoders, precoder fit,
/// MMSE combiners, combiner fit.
#[derive(Clone, Debug)]
pub struct HybridDesign {
    pub beamformer: HybridBeamformer,
    pub precoder_report: MoReport,
    pub combiner_report: MoReport,
}

pub fn design_hybrid(
    fc: &FrequencyChannel,
    n_rf: usize,
    link: &LinkParams,
    settings: &MoSettings,
) -> Result<HybridDesign> {
    link.validate()?;
    let n_s = link.n_streams;
    let f_opt = beamforming::optimal_precoders(fc, n_s)?;
    let (pre, precoder_report) = solve_precoder(&CMat::hstack(&f_opt)?, n_s, n_rf, settings)?;

    let mut w_mmse = Vec::with_capacity(f_opt.len());
    let mut lambdas = Vec::with_capacity(f_opt.len());
    for (k, h) in fc.per_subcarrier.iter().enumerate() {
        w_mmse.push(beamforming::mmse_combiner(h, &f_opt[k], link)?);
        lambdas.push(beamforming::output_covariance(h, &pre.f_rf, &pre.f_bb[k], link)?);
    }
    let (comb, combiner_report) =
        solve_combiner(&CMat::hstack(&w_mmse)?, &lambdas, n_rf, settings)?;
    Ok(HybridDesign {
        beamformer: HybridBeamformer {
            f_rf: pre.f_rf,
            w_rf: comb.w_rf,
            f_bb: pre.f_bb,
            w_bb: comb.w_bb,
        },
        precoder_report,
        combiner_report,
    })
}
