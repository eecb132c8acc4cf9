#![allow(dead_code)]

use std::path::PathBuf;

use num_complex::Complex64;
use rand::Rng;

use dlhb::channel::{DelayChannel, FrequencyChannel};
use dlhb::harness::ExperimentConfig;
use dlhb::manopt;
use dlhb::numerics::{self, CMat};
use dlhb::rng::{self, SimRng};

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn load_config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(config_path(name)).expect("bundled config loads")
}

pub fn test_rng(seed: u64) -> SimRng {
    rng::rng_for(seed, &[0xC0FFEE])
}

pub fn random_cmat(rows: usize, cols: usize, r: &mut SimRng) -> CMat {
    CMat::from_fn(rows, cols, |_, _| rng::complex_normal(r, 1.0))
}

/// `b^H b + I`.
pub fn random_hpd(n: usize, r: &mut SimRng) -> CMat {
    let b = random_cmat(n, n, r);
    &b.adjoint_mul(&b) + &CMat::identity(n)
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// `max |a^H a - I|` entrywise.
pub fn orthonormality_deviation(a: &CMat) -> f64 {
    max_abs_diff(&a.adjoint_mul(a), &CMat::identity(a.cols()))
}

/// Subcarrier `k` carries `H[m]` with `m = k + 1`.
pub fn naive_dft(dc: &DelayChannel, m: usize) -> Vec<CMat> {
    let (rows, cols) = dc.taps[0].shape();
    (1..=m)
        .map(|mm| {
            let mut out = CMat::zeros(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    let mut s = Complex64::new(0.0, 0.0);
                    for (d, tap) in dc.taps.iter().enumerate() {
                        let ang = -2.0 * std::f64::consts::PI * (mm * d) as f64 / m as f64;
                        s += tap[(i, j)] * Complex64::from_polar(1.0, ang);
                    }
                    out[(i, j)] = s;
                }
            }
            out
        })
        .collect()
}

pub fn parseval_gap(dc: &DelayChannel, fc: &FrequencyChannel) -> f64 {
    let time: f64 = dc.taps.iter().map(CMat::norm_sqr).sum();
    let freq: f64 = fc.per_subcarrier.iter().map(CMat::norm_sqr).sum();
    let m = fc.n_subcarriers() as f64;
    (freq - m * time).abs() / (m * time).max(f64::MIN_POSITIVE)
}

pub const GRID: usize = 256;

fn two_phase_column(p0: usize, p1: usize) -> CMat {
    let step = 2.0 * std::f64::consts::PI / GRID as f64;
    CMat::from_vec(
        2,
        1,
        vec![Complex64::from_polar(1.0, p0 as f64 * step), Complex64::from_polar(1.0, p1 as f64 * step)],
    )
    .expect("2x1")
}

/// Minimum of `f` over the `GRID x GRID` phase grid of a 2 x 1 unit-modulus column.
pub fn grid_min(f: impl Fn(&CMat) -> f64) -> f64 {
    let mut best = f64::INFINITY;
    for p0 in 0..GRID {
        for p1 in 0..GRID {
            best = best.min(f(&two_phase_column(p0, p1)));
        }
    }
    best
}

/// Objective of the precoder fit with the digital stage solved exactly.
pub fn precoder_fit_value(target: &CMat, x: &CMat) -> f64 {
    let bb = numerics::lstsq(x, target).expect("full column rank");
    manopt::fit_objective(target, x, &bb)
}

/// Objective of the combiner fit with the covariance-weighted digital stage.
pub fn combiner_fit_value(target: &CMat, lambdas: &[CMat], x: &CMat) -> f64 {
    let n_s = target.cols() / lambdas.len();
    let blocks = target.split_cols(n_s);
    let bb = manopt::combiner_baseband(x, lambdas, &blocks).expect("HPD");
    manopt::fit_objective(target, x, &CMat::hstack(&bb).expect("same rows"))
}

/// Unit-norm random column of length `n`.
pub fn random_unit_column(n: usize, r: &mut SimRng) -> CMat {
    let v = random_cmat(n, 1, r);
    v.scale(1.0 / v.norm())
}

pub fn uniform(r: &mut SimRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * r.random::<f64>()
}
