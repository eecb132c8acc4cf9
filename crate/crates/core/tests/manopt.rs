mod common;

use num_complex::Complex64;
use proptest::prelude::*;

use common::{combiner_fit_value, grid_min, load_config, precoder_fit_value, random_cmat, random_hpd, random_unit_column, test_rng};
use dlhb::beamforming;
use dlhb::manopt::{self, MoSettings};
use dlhb::numerics::CMat;

fn settings() -> MoSettings {
    MoSettings::default()
}

#[test]
fn analog_fit_reaches_grid_minimum() {
    let mut r = test_rng(30);
    for k in 0..4 {
        let a = random_cmat(2, 1, &mut r);
        let b = random_cmat(1, 1, &mut r);
        let x0 = manopt::random_unit_modulus(2, 1, k, &[]);
        let (x, rep) = manopt::fit_analog(&a, &b, &x0, &settings()).unwrap();
        let best = grid_min(|x| manopt::fit_objective(&a, x, &b));
        assert!(rep.final_objective() <= best + 1e-3, "{} vs grid {best}", rep.final_objective());
        assert_eq!(rep.final_objective(), manopt::fit_objective(&a, &x, &b));
    }
}

#[test]
fn precoder_and_combiner_reach_grid_minimum() {
    let mut r = test_rng(31);
    for k in 0..3 {
        let target = random_unit_column(2, &mut r);
        let s = MoSettings { seed: k, ..settings() };
        let (_, rep) = manopt::solve_precoder(&target, 1, 1, &s).unwrap();
        let best = grid_min(|x| precoder_fit_value(&target, x));
        assert!(rep.final_objective() <= best + 1e-3);

        let w = random_cmat(2, 1, &mut r);
        let lambdas = vec![random_hpd(2, &mut r)];
        let (design, rep) = manopt::solve_combiner(&w, &lambdas, 1, &s).unwrap();
        let best = grid_min(|x| combiner_fit_value(&w, &lambdas, x));
        assert!(rep.final_objective() <= best + 1e-3);
        assert!((combiner_fit_value(&w, &lambdas, &design.w_rf) - rep.final_objective()).abs() < 1e-12);
    }
}

/// Central differences along the real and imaginary part of every entry.
fn finite_difference(a: &CMat, x: &CMat, b: &CMat, h: f64) -> CMat {
    let mut out = CMat::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let mut part = [0.0; 2];
            for (p, dir) in [Complex64::new(h, 0.0), Complex64::new(0.0, h)].into_iter().enumerate() {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[(i, j)] += dir;
                xm[(i, j)] -= dir;
                part[p] = (manopt::fit_objective(a, &xp, b) - manopt::fit_objective(a, &xm, b)) / (2.0 * h);
            }
            out[(i, j)] = Complex64::new(part[0], part[1]);
        }
    }
    out
}

#[test]
fn euclidean_gradient_matches_finite_differences() {
    let mut r = test_rng(32);
    for _ in 0..10 {
        let a = random_cmat(5, 6, &mut r);
        let b = random_cmat(3, 6, &mut r);
        let x = random_cmat(5, 3, &mut r);
        let g = manopt::fit_egrad(&a, &x, &b);
        let fd = finite_difference(&a, &x, &b, 1e-5);
        assert!((&g - &fd).norm() <= 1e-6 * g.norm());
    }
}

#[test]
fn desk_traces_are_monotone() {
    let cfg = load_config("desk.toml");
    let lk = cfg.link(10.0);
    for j in 0..10 {
        let fc = cfg.test_channel(j).unwrap();
        let d = manopt::design_hybrid(&fc, cfg.scenario.n_rf, &lk, &cfg.scenario.mo).unwrap();
        assert!(d.precoder_report.max_increase() <= 1e-12);
        assert!(d.combiner_report.max_increase() <= 1e-12);
        assert!(d.precoder_report.objective_trace.len() >= 2);
    }
}

#[test]
fn square_analog_stage_fits_digital_precoder() {
    let cfg = load_config("desk.toml");
    let fc = cfg.test_channel(0).unwrap();
    let ns = cfg.scenario.n_streams;
    let n_t = cfg.scenario.channel.n_tx;
    let f_opt = CMat::hstack(&beamforming::optimal_precoders(&fc, ns).unwrap()).unwrap();
    let s = MoSettings { outer_iters: 50, inner_iters: 200, obj_tol: 1e-12, ..settings() };
    let (design, _) = manopt::solve_precoder(&f_opt, ns, n_t, &s).unwrap();
    let (_, rep) = manopt::solve_precoder(&f_opt, ns, n_t, &s).unwrap();
    let rel = rep.final_objective().sqrt() / f_opt.norm();
    assert!(rel < 1e-3, "relative fit {rel}");
    assert!(design.f_rf.data().iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
}

#[test]
fn identity_covariance_combiner_fits_square_target() {
    let cfg = load_config("desk.toml");
    let fc = cfg.test_channel(1).unwrap();
    let n_r = cfg.scenario.channel.n_rx;
    let lk = cfg.link(10.0);
    let f_opt = beamforming::optimal_precoders(&fc, lk.n_streams).unwrap();
    let w: Vec<CMat> = fc
        .per_subcarrier
        .iter()
        .zip(&f_opt)
        .map(|(h, f)| beamforming::mmse_combiner(h, f, &lk).unwrap())
        .collect();
    let target = CMat::hstack(&w).unwrap();
    let lambdas = vec![CMat::identity(n_r); w.len()];
    let s = MoSettings { outer_iters: 50, inner_iters: 200, obj_tol: 1e-12, ..settings() };
    let (_, rep) = manopt::solve_combiner(&target, &lambdas, n_r, &s).unwrap();
    let rel = rep.final_objective().sqrt() / target.norm();
    assert!(rel < 1e-3, "relative fit {rel}");
}

#[test]
fn solvers_are_deterministic() {
    let mut r = test_rng(33);
    let target = random_cmat(8, 6, &mut r);
    let a = manopt::solve_precoder(&target, 2, 3, &settings()).unwrap();
    let b = manopt::solve_precoder(&target, 2, 3, &settings()).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fit_analog_output_is_unit_modulus_and_descends(seed in 0u64..10_000) {
        let mut r = test_rng(seed);
        let a = random_cmat(6, 4, &mut r);
        let b = random_cmat(2, 4, &mut r);
        let x0 = manopt::random_unit_modulus(6, 2, seed, &[]);
        let (x, rep) = manopt::fit_analog(&a, &b, &x0, &settings()).unwrap();
        prop_assert!(x.data().iter().all(|z| (z.norm() - 1.0).abs() <= 1e-12));
        prop_assert!(rep.max_increase() <= 0.0 || rep.objective_trace.len() < 2);
    }

    #[test]
    fn tangent_projection_is_orthogonal_to_radial(seed in 0u64..10_000) {
        let mut r = test_rng(seed);
        let x = manopt::random_unit_modulus(4, 3, seed, &[]);
        let g = random_cmat(4, 3, &mut r);
        let t = manopt::tangent_project(&g, &x);
        for (ti, xi) in t.data().iter().zip(x.data()) {
            prop_assert!((ti * xi.conj()).re.abs() < 1e-12);
        }
    }
}
