mod common;

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

use common::{load_config, max_abs_diff, random_cmat, test_rng};
use dlhb::beamforming::{self, HybridBeamformer, LinkParams};
use dlhb::channel::FrequencyChannel;
use dlhb::manopt;
use dlhb::numerics::{self, CMat};

const J: Complex64 = Complex64::new(0.0, 1.0);

fn link(rho: f64, noise_var: f64, n_streams: usize) -> LinkParams {
    LinkParams { rho, noise_var, n_streams }
}

fn scalar(z: Complex64) -> CMat {
    CMat::from_vec(1, 1, vec![z]).unwrap()
}

fn inverse_2x2(a: &CMat) -> CMat {
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    CMat::from_vec(2, 2, vec![a[(1, 1)] / det, -a[(0, 1)] / det, -a[(1, 0)] / det, a[(0, 0)] / det]).unwrap()
}

/// Largest absolute inner product of `v` with any column of `basis`.
fn aligned(v: &[Complex64], basis: &DMatrix<Complex64>, col: usize) -> f64 {
    v.iter().enumerate().map(|(i, z)| basis[(i, col)].conj() * z).sum::<Complex64>().norm()
}

#[test]
fn precoder_spans_dominant_gram_eigenvectors() {
    let mut r = test_rng(20);
    let h = random_cmat(4, 6, &mut r);
    let f = beamforming::optimal_precoder(&h, 2).unwrap();
    let g = h.adjoint_mul(&h);
    let eig = DMatrix::from_fn(6, 6, |i, j| g[(i, j)]).symmetric_eigen();
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    for (k, &idx) in order.iter().take(2).enumerate() {
        let dot = aligned(&f.col(k), &eig.eigenvectors, idx);
        assert!((dot - 1.0).abs() < 1e-9, "stream {k}: {dot}");
    }
}

#[test]
fn precoder_examples() {
    let d = CMat::from_real_diag(2, 2, &[3.0, 1.0]);
    let f = beamforming::optimal_precoder(&d, 1).unwrap();
    assert!((f[(0, 0)].norm() - 1.0).abs() < 1e-12 && f[(1, 0)].norm() < 1e-12);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let u = CMat::from_vec(2, 2, vec![s.into(), J * s, J * s, s.into()]).unwrap();
    let f = beamforming::optimal_precoder(&u, 2).unwrap();
    assert!(((&u * &f).norm_sqr() - 2.0).abs() < 1e-12);
}

#[test]
fn mmse_matches_cofactor_transcription() {
    let mut r = test_rng(21);
    let h = random_cmat(4, 5, &mut r);
    let f = beamforming::optimal_precoder(&h, 2).unwrap();
    let lk = link(3.0, 0.7, 2);
    let g = &h * &f;
    let load = 2.0 * lk.noise_var / lk.rho;
    let normal = &g.adjoint_mul(&g) + &CMat::identity(2).scale(load);
    let wh = (&inverse_2x2(&normal) * &g.adjoint()).scale(1.0 / lk.rho);
    let w = beamforming::mmse_combiner(&h, &f, &lk).unwrap();
    assert!(max_abs_diff(&w, &wh.adjoint()) < 1e-12);
}

#[test]
fn mmse_scalar_and_noise_limit() {
    let e1 = CMat::from_fn(3, 1, |i, _| if i == 0 { 1.0.into() } else { 0.0.into() });
    let w = beamforming::mmse_combiner(&CMat::identity(3), &e1, &link(1.0, 1.0, 1)).unwrap();
    assert!(max_abs_diff(&w, &e1.scale(0.5)) < 1e-15);

    let mut r = test_rng(22);
    let h = random_cmat(4, 4, &mut r);
    let f = beamforming::optimal_precoder(&h, 2).unwrap();
    let noise = 1e6;
    let w = beamforming::mmse_combiner(&h, &f, &link(1.0, noise, 2)).unwrap();
    let limit = (&h * &f).scale(1.0 / (2.0 * noise));
    assert!((&w - &limit).norm() <= 0.01 * limit.norm());
    assert!(w.norm() < 1e-4);
}

#[test]
fn rate_examples() {
    let lk = link(2.5, 0.5, 1);
    let h = Complex64::new(0.6, -1.1);
    let bf = HybridBeamformer {
        f_rf: scalar(1.0.into()),
        w_rf: scalar(1.0.into()),
        f_bb: vec![scalar(1.0.into())],
        w_bb: vec![scalar(1.0.into())],
    };
    let fc = FrequencyChannel { per_subcarrier: vec![scalar(h)] };
    let want = (1.0 + lk.rho * h.norm_sqr() / lk.noise_var).log2();
    assert!((beamforming::spectral_efficiency(&fc, &bf, &lk).unwrap() - want).abs() < 1e-12);

    let zero = FrequencyChannel::zeros(1, 1, 1);
    assert_eq!(beamforming::spectral_efficiency(&zero, &bf, &lk).unwrap(), 0.0);
    assert_eq!(beamforming::digital_spectral_efficiency(&FrequencyChannel::zeros(4, 6, 3), &link(1.0, 1.0, 2)).unwrap(), 0.0);

    let d = FrequencyChannel { per_subcarrier: vec![scalar(2.0.into())] };
    let got = beamforming::digital_spectral_efficiency(&d, &link(1.0, 1.0, 1)).unwrap();
    assert!((got - 5f64.log2()).abs() < 1e-12);
}

#[test]
fn matched_rank_one_channel() {
    let mut r = test_rng(23);
    let u = random_cmat(3, 1, &mut r);
    let v = random_cmat(5, 1, &mut r);
    let (u, v) = (u.scale(1.0 / u.norm()), v.scale(1.0 / v.norm()));
    let sigma = 1.7;
    let h = (&u * &v.adjoint()).scale(sigma);
    let bf = HybridBeamformer {
        f_rf: v.clone(),
        w_rf: u.clone(),
        f_bb: vec![scalar(1.0.into())],
        w_bb: vec![scalar(1.0.into())],
    };
    let lk = link(4.0, 1.0, 1);
    let fc = FrequencyChannel { per_subcarrier: vec![h] };
    let want = (1.0 + lk.rho * sigma * sigma / lk.noise_var).log2();
    assert!((beamforming::spectral_efficiency(&fc, &bf, &lk).unwrap() - want).abs() < 1e-12);
}

#[test]
fn digital_equals_svd_beamformers() {
    let mut r = test_rng(24);
    let fc = FrequencyChannel { per_subcarrier: (0..3).map(|_| random_cmat(4, 8, &mut r)).collect() };
    let lk = link(2.0, 1.0, 2);
    let mut f_bb = Vec::new();
    let mut w_bb = Vec::new();
    for h in &fc.per_subcarrier {
        let s = numerics::svd(h).unwrap();
        f_bb.push(s.right.col_block(0, 2));
        w_bb.push(s.left.col_block(0, 2));
    }
    let bf = HybridBeamformer {
        f_rf: CMat::identity(8),
        w_rf: CMat::identity(4),
        f_bb,
        w_bb,
    };
    let a = beamforming::spectral_efficiency(&fc, &bf, &lk).unwrap();
    let b = beamforming::digital_spectral_efficiency(&fc, &lk).unwrap();
    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
}

#[test]
fn normalization_examples() {
    let mut r = test_rng(25);
    let f_rf = manopt::random_unit_modulus(6, 2, 1, &[]);
    let f_bb: Vec<CMat> = (0..4).map(|_| random_cmat(2, 2, &mut r)).collect();
    let n = beamforming::normalize_power(&f_rf, &f_bb).unwrap();
    assert!((beamforming::transmit_power(&f_rf, &n) - 8.0).abs() < 1e-12);
    let again = beamforming::normalize_power(&f_rf, &n).unwrap();
    let tripled: Vec<CMat> = n.iter().map(|b| b.scale(3.0)).collect();
    let back = beamforming::normalize_power(&f_rf, &tripled).unwrap();
    for k in 0..4 {
        assert!(max_abs_diff(&again[k], &n[k]) < 1e-12);
        assert!(max_abs_diff(&back[k], &n[k]) < 1e-12);
    }
}

#[test]
fn output_covariance_examples() {
    let lk = link(2.0, 0.3, 1);
    let zero = beamforming::output_covariance(&CMat::zeros(3, 4), &CMat::zeros(4, 2), &CMat::zeros(2, 1), &lk).unwrap();
    assert!(max_abs_diff(&zero, &CMat::identity(3).scale(0.3)) == 0.0);
    let one = scalar(1.0.into());
    let s = beamforming::output_covariance(&one, &one, &one, &lk).unwrap();
    assert!((s[(0, 0)] - Complex64::from(2.3)).norm() < 1e-15);

    let mut r = test_rng(26);
    for _ in 0..20 {
        let out = beamforming::output_covariance(
            &random_cmat(2, 5, &mut r),
            &manopt::random_unit_modulus(5, 2, 3, &[]),
            &random_cmat(2, 2, &mut r),
            &lk,
        )
        .unwrap();
        assert!(out.hermitian_deviation() < 1e-12);
        let (p, q, c) = (out[(0, 0)].re, out[(1, 1)].re, out[(0, 1)].norm_sqr());
        let min_eig = 0.5 * (p + q) - (0.25 * (p - q) * (p - q) + c).sqrt();
        assert!(min_eig >= lk.noise_var - 1e-9);
    }
}

#[test]
fn mo_design_never_beats_digital() {
    let cfg = load_config("desk.toml");
    for j in 0..5 {
        let fc = cfg.test_channel(j).unwrap();
        for snr in [-10.0, 0.0, 20.0] {
            let lk = cfg.link(snr);
            let d = manopt::design_hybrid(&fc, cfg.scenario.n_rf, &lk, &cfg.scenario.mo).unwrap();
            d.beamformer.validate().unwrap();
            let mo = beamforming::spectral_efficiency(&fc, &d.beamformer, &lk).unwrap();
            let dig = beamforming::digital_spectral_efficiency(&fc, &lk).unwrap();
            assert!(mo <= dig + 1e-9 && mo >= 0.0, "trial {j}, {snr} dB: {mo} > {dig}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rate_ignores_column_phases(seed in 0u64..10_000, a in 0.0f64..6.3, b in 0.0f64..6.3) {
        let mut r = test_rng(seed);
        let fc = FrequencyChannel { per_subcarrier: (0..2).map(|_| random_cmat(3, 4, &mut r)).collect() };
        let bf = HybridBeamformer {
            f_rf: manopt::random_unit_modulus(4, 2, seed, &[1]),
            w_rf: manopt::random_unit_modulus(3, 2, seed, &[2]),
            f_bb: (0..2).map(|_| random_cmat(2, 2, &mut r)).collect(),
            w_bb: (0..2).map(|_| random_cmat(2, 2, &mut r)).collect(),
        };
        let lk = link(3.0, 1.0, 2);
        let base = beamforming::spectral_efficiency(&fc, &bf, &lk).unwrap();
        let mut rot = bf.clone();
        for m in 0..2 {
            for i in 0..2 {
                rot.f_bb[m][(i, 0)] *= Complex64::from_polar(1.0, a);
                rot.w_bb[m][(i, 1)] *= Complex64::from_polar(1.0, b);
            }
        }
        let turned = beamforming::spectral_efficiency(&fc, &rot, &lk).unwrap();
        prop_assert!((turned - base).abs() < 1e-9);
    }
}
