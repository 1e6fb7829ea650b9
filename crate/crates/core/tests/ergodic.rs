//! Lyapunov, drift and total-variation checks.

use jcir::ergodic::{
    dobrushin_check, drift_certificate, drift_grid, ergodicity_experiment, generator_on_v, m_norm,
    solve_lyapunov, tv_distance, v_value, DobrushinSpec, ErgodicitySpec,
};
use jcir::levy_rng::c_alpha;
use jcir::model::{LevyMeasureSpec, ModelParams};
use jcir::numerics::quad::{integrate, QuadOptions};
use jcir::simulator::{simulate_ensemble, EnsembleSpec, Keep};
use jcir::{Error, Exec};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn acceptance_2d() -> ModelParams {
    ModelParams::from_rows(
        vec![0.5, 0.5],
        &[vec![-1.0, 0.2], vec![0.3, -1.5]],
        vec![1.0, 1.0],
        vec![1.3, 1.7],
        LevyMeasureSpec::CoordinateStable {
            theta: vec![0.6, 0.6],
            weight: vec![0.5, 0.5],
        }
        .truncated(5.0),
    )
    .unwrap()
}

fn random_subcritical(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    loop {
        let mut b = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                b[(i, j)] = if i == j {
                    -0.5 - 2.0 * rng.random::<f64>()
                } else {
                    0.5 * rng.random::<f64>()
                };
            }
        }
        if jcir::model::is_subcritical(&b) {
            return b;
        }
    }
}

#[test]
fn lyapunov_matches_the_integral_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in [2usize, 3] {
        let beta = random_subcritical(&mut rng, n);
        let l = solve_lyapunov(&beta).unwrap();
        assert!(l.residual <= 1e-10);
        assert!((&l.m - l.m.transpose()).amax() <= 1e-12);
        let horizon = 40.0 / jcir::model::spectral_abscissa(&beta).abs();
        for i in 0..n {
            for j in 0..n {
                let q = integrate(
                    |t: f64| {
                        let e = (&beta * t).exp();
                        (e.transpose() * e)[(i, j)]
                    },
                    0.0,
                    horizon,
                    QuadOptions::with_tol(1e-12, 1e-11),
                );
                assert!(
                    (q.value - l.m[(i, j)]).abs() < 1e-6,
                    "({i},{j}): {} vs {}",
                    q.value,
                    l.m[(i, j)]
                );
            }
        }
    }
}

#[test]
fn generator_without_noise_is_the_quadratic_identity() {
    let p = ModelParams::from_rows(
        vec![0.3, 0.7],
        &[vec![-1.0, 0.2], vec![0.3, -1.5]],
        vec![0.0, 0.0],
        vec![1.5, 1.5],
        LevyMeasureSpec::Zero,
    )
    .unwrap();
    let l = solve_lyapunov(&p.beta).unwrap();
    for x in [[0.0, 0.0], [1.0, 2.0], [30.0, 0.5]] {
        let v = v_value(&x, &l);
        let mx = &l.m * nalgebra::DVector::from_column_slice(&x);
        let b_mx = 0.3 * mx[0] + 0.7 * mx[1];
        let sq = x[0] * x[0] + x[1] * x[1];
        let exact = -sq / (2.0 * v) + b_mx / v;
        let got = generator_on_v(&p, &x, &l, 1e-10).unwrap();
        assert!((got - exact).abs() < 1e-12, "{got} vs {exact}");
    }
}

#[test]
fn generator_noise_term_matches_direct_quadrature() {
    // 1D: σx/c_α ∫ (V(x+z) − V(x) − zV'(x)) z^{−1−α} dz on a log scale
    let alpha = 1.5;
    let p = ModelParams::from_rows(
        vec![0.0],
        &[vec![-1.0]],
        vec![1.0],
        vec![alpha],
        LevyMeasureSpec::Zero,
    )
    .unwrap();
    let l = solve_lyapunov(&p.beta).unwrap();
    let x = 2.0;
    let mm = l.m[(0, 0)];
    let vf = |y: f64| (1.0 + mm * y * y).sqrt();
    let dv = mm * x / vf(x);
    let d2v = mm / vf(x).powi(3);
    let integrand = |s: f64| {
        let z = s.exp();
        let g = if z < 1e-4 {
            0.5 * d2v * z * z
        } else {
            vf(x + z) - vf(x) - z * dv
        };
        g * z.powf(-alpha)
    };
    let q = integrate(integrand, -40.0, 40.0, QuadOptions::with_tol(1e-13, 1e-11));
    let exact = -x * x / (2.0 * vf(x)) + x * q.value / c_alpha(alpha).unwrap();
    let got = generator_on_v(&p, &[x], &l, 1e-10).unwrap();
    assert!((got - exact).abs() < 1e-6, "{got} vs {exact}");
}

#[test]
fn generator_jump_term_matches_direct_quadrature() {
    // ν = z^{−1−θ} on (0, 1] in 1D, σ = 0
    let theta = 0.6;
    let p = ModelParams::from_rows(
        vec![0.0],
        &[vec![-1.0]],
        vec![0.0],
        vec![1.5],
        LevyMeasureSpec::CoordinateStable {
            theta: vec![theta],
            weight: vec![1.0],
        }
        .truncated(3.0),
    )
    .unwrap();
    let l = solve_lyapunov(&p.beta).unwrap();
    let x = 1.5;
    // 30-digit adaptive quadrature of −x²/(2V) + ∫_0^1 (V(x+z) − V(x)) z^{−1.6} dz, V = (1 + y²/2)^{1/2}
    let exact = 0.562_285_483_841_845_8;
    let got = generator_on_v(&p, &[x], &l, 1e-10).unwrap();
    assert!((got - exact).abs() < 1e-10, "{got} vs {exact}");
}

#[test]
fn drift_certificate_for_the_truncated_model() {
    let p = acceptance_2d();
    let l = solve_lyapunov(&p.beta).unwrap();
    let grid = drift_grid(2, 1e3);
    let cert = drift_certificate(&p, &l, &grid, 1e-9, Exec::Parallel).unwrap();
    assert!(
        cert.c1 > 0.0 && cert.c2.is_finite(),
        "c1 = {}, c2 = {}",
        cert.c1,
        cert.c2
    );
    for pt in &cert.points {
        assert!(pt.generator <= -cert.c1 * pt.v + cert.c2 + 1e-9);
    }
    // at the origin the state-dependent terms vanish: only ⟨b, ∇V(0)⟩ = 0 and jumps remain
    let at0 = generator_on_v(&p, &[0.0, 0.0], &l, 1e-10).unwrap();
    assert!(at0 > 0.0);
}

#[test]
fn tv_of_two_halves_is_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 100_000;
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..2 * n)
            .map(|i| {
                let g: f64 = rng.sample(StandardNormal);
                if i % 2 == 0 {
                    g.exp()
                } else {
                    1.0 + g
                }
            })
            .collect()
    };
    let a = draw(&mut rng);
    let b = draw(&mut rng);
    let c: Vec<f64> = draw(&mut rng).iter().map(|v| v + 0.3).collect();
    let ab = tv_distance(&a, &b, 2, 20).unwrap();
    assert!(ab.tv < 0.1, "{ab:?}");
    assert!(ab.bins_per_axis.iter().all(|b| *b <= 20));
    let ba = tv_distance(&b, &a, 2, 20).unwrap().tv;
    assert!((ab.tv - ba).abs() < 1e-12);
    let ac = tv_distance(&a, &c, 2, 20).unwrap().tv;
    let bc = tv_distance(&b, &c, 2, 20).unwrap().tv;
    // triangle inequality up to the difference of adaptive grids
    assert!(ac <= ab.tv + bc + 0.05, "{ac} > {} + {bc}", ab.tv);
}

fn ensemble(p: &ModelParams, x0: &[f64], t: f64, n: usize, seed: u64) -> Vec<f64> {
    simulate_ensemble(
        &EnsembleSpec {
            params: p,
            x0,
            t_final: t,
            dt: 0.01,
            n_paths: n,
            master_seed: seed,
        },
        &Keep::Terminal,
        Exec::Parallel,
    )
    .unwrap()
    .terminal()
    .to_vec()
}

#[test]
fn equal_starts_stay_below_the_floor() {
    let p = acceptance_2d();
    let n = 20_000;
    let a = ensemble(&p, &[1.0, 1.0], 1.0, n, 1);
    let b = ensemble(&p, &[1.0, 1.0], 1.0, n, 2);
    let floor = tv_distance(&a[..n], &a[n..], 2, 20).unwrap().tv;
    let tv = tv_distance(&a, &b, 2, 20).unwrap().tv;
    assert!(tv < floor, "{tv} vs floor {floor}");
    let spec = ErgodicitySpec {
        params: &p,
        x: &[1.0, 1.0],
        y: &[1.0, 1.0],
        t_grid: &[0.5, 1.0, 2.0],
        n_paths: 4000,
        master_seed: 3,
        dt: Some(0.01),
        bins_per_axis: 20,
        bootstrap: 20,
    };
    assert!(matches!(
        ergodicity_experiment(&spec, Exec::Parallel),
        Err(Error::DegenerateFit(_))
    ));
}

#[test]
fn two_start_decay_has_a_positive_rate() {
    let p = acceptance_2d();
    let spec = ErgodicitySpec {
        params: &p,
        x: &[5.0, 0.0],
        y: &[0.0, 5.0],
        t_grid: &[0.5, 1.0, 2.0, 3.0, 4.0, 6.0],
        n_paths: 20_000,
        master_seed: 21,
        dt: Some(0.02),
        bins_per_axis: 6,
        bootstrap: 100,
    };
    let r = ergodicity_experiment(&spec, Exec::Parallel).unwrap();
    assert!(r.delta_hat > 0.0 && r.delta_ci.0 > 0.0, "{r:?}");
    assert!(r.monotonicity_violations == 0, "{r:?}");
    assert!(r
        .rows
        .iter()
        .all(|row| row.ci_lo <= row.tv + 1e-12 || row.ci_lo <= row.ci_hi));
}

#[test]
fn dobrushin_probe_is_bounded_and_vanishes_for_long_horizons() {
    let p = acceptance_2d();
    let spec = DobrushinSpec {
        params: &p,
        level: 4.0,
        horizon: 8.0,
        n_pairs: 3,
        n_paths: 4000,
        master_seed: 8,
        dt: Some(0.02),
        bins_per_axis: 10,
    };
    let r = dobrushin_check(&spec, Exec::Parallel).unwrap();
    assert!(r.max_tv <= 2.0 && r.margin >= 0.0);
    // pure sampling noise at this size is ~0.1 on a 10×10 grid
    assert!(r.max_tv < 0.2, "{r:?}");
    assert_eq!(r.pairs[0].x, r.pairs[0].y);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn norm_equivalence_and_monotone_v(x0 in 0.0f64..50.0, x1 in 0.0f64..50.0) {
        let beta = DMatrix::from_row_slice(2, 2, &[-1.0, 0.2, 0.3, -1.5]);
        let l = solve_lyapunov(&beta).unwrap();
        let x = [x0, x1];
        let e = (x0 * x0 + x1 * x1).sqrt();
        let n = m_norm(&x, &l);
        prop_assert!(l.c_star * e <= n * (1.0 + 1e-12) + 1e-15);
        prop_assert!(n <= l.c_superstar * e * (1.0 + 1e-12) + 1e-15);
        prop_assert!(v_value(&[2.0 * x0, 2.0 * x1], &l) >= v_value(&x, &l));
        prop_assert!(v_value(&x, &l) >= 1.0);
    }
}
