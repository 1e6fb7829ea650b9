//! Lyapunov function, drift certificate, total-variation estimates and
//! exponential-decay fits.
//!
//! Total variation uses the full-mass convention: mutually singular laws are at
//! distance 2.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::levy_rng::c_alpha;
use crate::model::{check_condition_a, is_subcritical, spectral_abscissa, ModelParams};
use crate::numerics::quad::{integrate, integrate_to_infinity, QuadOptions};
use crate::simulator::{
    default_condition_grid, default_dt, ls_fit, simulate_ensemble, EnsembleSpec, Keep,
};

/// `M` solving `Mβ + βᵀM = −I`, with `c_*² = λ_min(M)`, `c^*² = λ_max(M)`.
#[derive(Clone, Debug, Serialize)]
pub struct LyapunovData {
    #[serde(serialize_with = "ser_matrix")]
    pub m: DMatrix<f64>,
    pub c_star: f64,
    pub c_superstar: f64,
    /// `‖Mβ + βᵀM + I‖_F`.
    pub residual: f64,
}

fn ser_matrix<S: serde::Serializer>(
    m: &DMatrix<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

/// Solves the continuous Lyapunov equation in its `m(m+1)/2` symmetric unknowns.
pub fn solve_lyapunov(beta: &DMatrix<f64>) -> Result<LyapunovData> {
    let n = beta.nrows();
    if n == 0 || beta.ncols() != n {
        return Err(Error::InvalidArgument(
            "beta must be a nonempty square matrix".into(),
        ));
    }
    if !is_subcritical(beta) {
        return Err(Error::NotSubcritical(spectral_abscissa(beta)));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let unknown = |i: usize, j: usize| -> usize {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        pairs
            .iter()
            .position(|p| *p == (a, b))
            .expect("pair in list")
    };
    let d = pairs.len();
    let mut a = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    for (row, &(p, q)) in pairs.iter().enumerate() {
        // (Mβ)_pq + (βᵀM)_pq = Σ_k M_pk β_kq + Σ_k β_kp M_kq
        for k in 0..n {
            a[(row, unknown(p, k))] += beta[(k, q)];
            a[(row, unknown(k, q))] += beta[(k, p)];
        }
        if p == q {
            rhs[row] = -1.0;
        }
    }
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidModel("Lyapunov system is singular".into()))?;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for (idx, &(i, j)) in pairs.iter().enumerate() {
        m[(i, j)] = sol[idx];
        m[(j, i)] = sol[idx];
    }
    let residual = (&m * beta + beta.transpose() * &m + DMatrix::<f64>::identity(n, n)).norm();
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo > 0.0) {
        return Err(Error::NonConvergence(format!(
            "Lyapunov solution is not positive definite (λ_min = {lo:e})"
        )));
    }
    Ok(LyapunovData {
        m,
        c_star: lo.sqrt(),
        c_superstar: hi.sqrt(),
        residual,
    })
}

fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += x[i] * m[(i, j)] * x[j];
        }
    }
    acc
}

/// `|x|_M = ⟨x, Mx⟩^{1/2}`.
pub fn m_norm(x: &[f64], lyap: &LyapunovData) -> f64 {
    quad_form(&lyap.m, x).max(0.0).sqrt()
}

/// `V(x) = (1 + |x|_M²)^{1/2}`.
pub fn v_value(x: &[f64], lyap: &LyapunovData) -> f64 {
    (1.0 + quad_form(&lyap.m, x)).sqrt()
}

/// `L_0 V(x)` for the generator with jumps of `ν` restricted to `|z| ≤ 1`.
pub fn generator_on_v(
    params: &ModelParams,
    x: &[f64],
    lyap: &LyapunovData,
    quad_tol: f64,
) -> Result<f64> {
    params.validate().structural()?;
    let n = params.m();
    if x.len() != n || lyap.m.nrows() != n {
        return Err(Error::InvalidArgument(format!(
            "x and M must have dimension {n}"
        )));
    }
    if x.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(
            "x must be finite and nonnegative".into(),
        ));
    }
    let m = &lyap.m;
    let a = 1.0 + quad_form(m, x);
    let v = a.sqrt();
    let mx: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| m[(i, j)] * x[j]).sum())
        .collect();

    let mut drift = 0.0;
    for i in 0..n {
        let bi = params.b[i] + (0..n).map(|j| params.beta[(i, j)] * x[j]).sum::<f64>();
        drift += bi * mx[i] / v;
    }

    let levy = params.compiled_levy();
    let jumps = if levy.is_zero() {
        0.0
    } else {
        levy.integrate_window(
            |z| {
                // V(x+z) − V(x) = (2⟨Mx,z⟩ + ⟨z,Mz⟩)/(V(x+z) + V(x))
                let lin: f64 = z.iter().zip(&mx).map(|(a, b)| a * b).sum();
                let delta = 2.0 * lin + quad_form(m, z);
                delta / ((a + delta).max(0.0).sqrt() + v)
            },
            0.0,
            1.0,
        )?
    };

    let opts = QuadOptions::with_tol(quad_tol, quad_tol);
    let mut noise = 0.0;
    for j in 0..n {
        if x[j] == 0.0 || params.sigma[j] == 0.0 {
            continue;
        }
        let alpha = params.alpha[j];
        let bj = mx[j];
        let cj = m[(j, j)];
        // V(x+z e_j) − V − z ∂_jV = z² (C − B²/A) / (S + v + zB/v)
        let curv = (cj - bj * bj / a).max(0.0);
        if curv == 0.0 {
            continue;
        }
        let h = |z: f64| {
            let s = (a + 2.0 * bj * z + cj * z * z).max(0.0).sqrt();
            let den = s + v + z * bj / v;
            if den > 0.0 {
                1.0 / den
            } else {
                0.0
            }
        };
        // ∫_0^1 z^{1−α} h dz with z = w^p, p = 1/(2−α)
        let p = 1.0 / (2.0 - alpha);
        let head = integrate(|w: f64| p * h(w.powf(p)), 0.0, 1.0, opts);
        let tail = integrate_to_infinity(|z: f64| z.powf(1.0 - alpha) * h(z), 1.0, opts);
        if !head.converged || !tail.converged {
            return Err(Error::Quadrature(format!(
                "stable-noise term of coordinate {j} at x = {x:?} missed tolerance {quad_tol:e}"
            )));
        }
        noise += params.sigma[j] * x[j] * curv * (head.value + tail.value) / c_alpha(alpha)?;
    }
    Ok(drift + jumps + noise)
}

#[derive(Clone, Debug, Serialize)]
pub struct DriftPoint {
    pub x: Vec<f64>,
    pub v: f64,
    pub generator: f64,
}

/// Constants with `L_0V ≤ −c1·V + c2` at every evaluated point.
#[derive(Clone, Debug, Serialize)]
pub struct DriftCertificate {
    pub c1: f64,
    pub c2: f64,
    pub points: Vec<DriftPoint>,
}

/// `{0} ∪` 30 log-spaced radii in `[1e−2, r_max]` along orthant directions.
pub fn drift_grid(m: usize, r_max: f64) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    if m == 1 {
        dirs.push(vec![1.0]);
    } else if m == 2 {
        for i in 0..9 {
            let a = std::f64::consts::FRAC_PI_2 * i as f64 / 8.0;
            dirs.push(vec![a.cos(), a.sin()]);
        }
    } else {
        for i in 0..m {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            dirs.push(e);
            for j in i + 1..m {
                let mut e = vec![0.0; m];
                e[i] = std::f64::consts::FRAC_1_SQRT_2;
                e[j] = std::f64::consts::FRAC_1_SQRT_2;
                dirs.push(e);
            }
        }
        dirs.push(vec![1.0 / (m as f64).sqrt(); m]);
    }
    let mut out = vec![vec![0.0; m]];
    let (lo, hi) = (1e-2f64.ln(), r_max.ln());
    for k in 0..30 {
        let r = (lo + (hi - lo) * k as f64 / 29.0).exp();
        for d in &dirs {
            out.push(d.iter().map(|v| v * r).collect());
        }
    }
    out
}

/// Evaluates `L_0V` on `grid` and solves the two-parameter program
/// `max c1` s.t. `L_0V(x_i) ≤ −c1 V(x_i) + c2`, with the far shell
/// (`|x| ≥ ½ max|x|`) standing in for the points at infinity: there `c2` is
/// negligible against `c1 V`, so `c1 ≤ −L_0V/V` pointwise.
pub fn drift_certificate(
    params: &ModelParams,
    lyap: &LyapunovData,
    grid: &[Vec<f64>],
    quad_tol: f64,
    exec: Exec,
) -> Result<DriftCertificate> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("drift grid is empty".into()));
    }
    let points = exec.try_map(grid.len(), |i| {
        Ok::<_, Error>(DriftPoint {
            x: grid[i].clone(),
            v: v_value(&grid[i], lyap),
            generator: generator_on_v(params, &grid[i], lyap, quad_tol)?,
        })
    })?;
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let r_max = grid.iter().map(|x| norm(x)).fold(0.0, f64::max);
    let c1 = points
        .iter()
        .filter(|p| norm(&p.x) >= 0.5 * r_max)
        .map(|p| -p.generator / p.v)
        .fold(f64::INFINITY, f64::min);
    let c2 = points
        .iter()
        .map(|p| p.generator + c1 * p.v)
        .fold(0.0, f64::max);
    Ok(DriftCertificate { c1, c2, points })
}

#[derive(Clone, Debug, Serialize)]
pub struct TvEstimate {
    /// `Σ_cells |p̂_a − p̂_b|`, in `[0, 2]`.
    pub tv: f64,
    pub bins_per_axis: Vec<usize>,
    pub occupied_cells: usize,
}

/// Per-axis equal-mass interior edges (deduplicated) of the pooled samples.
pub fn quantile_edges(pooled: &[&[f64]], m: usize, bins: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|k| {
            let mut col: Vec<f64> = pooled
                .iter()
                .flat_map(|s| s.iter().skip(k).step_by(m).copied())
                .collect();
            col.sort_by(f64::total_cmp);
            let n = col.len();
            let mut edges: Vec<f64> = (1..bins).map(|i| col[(i * n / bins).min(n - 1)]).collect();
            edges.dedup();
            edges
        })
        .collect()
}

/// Cell index of every row under `edges`.
pub fn cell_indices(samples: &[f64], m: usize, edges: &[Vec<f64>]) -> Vec<u64> {
    samples
        .chunks_exact(m)
        .map(|row| {
            let mut idx = 0u64;
            for (k, e) in edges.iter().enumerate() {
                let b = e.partition_point(|v| *v <= row[k]) as u64;
                idx = idx * (e.len() as u64 + 1) + b;
            }
            idx
        })
        .collect()
}

fn tv_from_cells(a: &[u64], b: &[u64]) -> (f64, usize) {
    let mut counts: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for c in a {
        counts.entry(*c).or_default().0 += 1;
    }
    for c in b {
        counts.entry(*c).or_default().1 += 1;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let tv = counts
        .values()
        .map(|(x, y)| (*x as f64 / na - *y as f64 / nb).abs())
        .sum();
    (tv, counts.len())
}

pub const MAX_BINS_PER_AXIS: usize = 20;

/// Histogram TV estimate on a common equal-mass grid with at most
/// `bins_per_axis ≤ 20` bins per axis. Finite-sample bias is positive; compare
/// with the self-distance of two halves of one ensemble.
pub fn tv_distance(a: &[f64], b: &[f64], m: usize, bins_per_axis: usize) -> Result<TvEstimate> {
    if m == 0 || a.len() < m || b.len() < m || a.len() % m != 0 || b.len() % m != 0 {
        return Err(Error::InvalidArgument(
            "sample sets must be nonempty rows of length m".into(),
        ));
    }
    let bins = bins_per_axis.clamp(1, MAX_BINS_PER_AXIS);
    let edges = quantile_edges(&[a, b], m, bins);
    let (tv, occupied) = tv_from_cells(&cell_indices(a, m, &edges), &cell_indices(b, m, &edges));
    Ok(TvEstimate {
        tv,
        bins_per_axis: edges.iter().map(|e| e.len() + 1).collect(),
        occupied_cells: occupied,
    })
}

#[derive(Clone, Debug)]
pub struct ErgodicitySpec<'a> {
    pub params: &'a ModelParams,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub t_grid: &'a [f64],
    pub n_paths: usize,
    pub master_seed: u64,
    /// `None` selects `min(0.01, T/1000)` for the largest `t`.
    pub dt: Option<f64>,
    pub bins_per_axis: usize,
    pub bootstrap: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayRow {
    pub t: f64,
    pub tv: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub floor: f64,
    pub used_in_fit: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ErgodicityReport {
    pub rows: Vec<DecayRow>,
    /// TV between two independent `n_paths` ensembles from `x` at the last time.
    pub floor: f64,
    pub delta_hat: f64,
    pub delta_ci: (f64, f64),
    pub intercept: f64,
    /// Steps where TV rose by more than twice the floor.
    pub monotonicity_violations: usize,
    pub n_paths: usize,
    pub dt: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn warn_hypotheses(params: &ModelParams) {
    match params.compiled_levy().log_moment_holds() {
        Ok(true) => {}
        Ok(false) => log::warn!("log-moment condition fails; an invariant law is not guaranteed"),
        Err(e) => log::warn!("log-moment condition could not be checked: {e}"),
    }
    match check_condition_a(params, &default_condition_grid(), None) {
        Ok(r) if r.overall => {}
        Ok(_) => log::warn!("immigration condition is not satisfied on the probe grid"),
        Err(e) => log::warn!("immigration condition could not be checked: {e}"),
    }
}

/// Two-start TV decay table and the fitted exponential rate `δ̂`.
pub fn ergodicity_experiment(spec: &ErgodicitySpec, exec: Exec) -> Result<ErgodicityReport> {
    let params = spec.params;
    params.validate().structural()?;
    if !is_subcritical(&params.beta) {
        return Err(Error::NotSubcritical(spectral_abscissa(&params.beta)));
    }
    warn_hypotheses(params);
    if spec.t_grid.is_empty() || spec.t_grid.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidArgument(
            "t_grid must be nonempty and positive".into(),
        ));
    }
    if spec.n_paths < 4 {
        return Err(Error::InvalidArgument("n_paths must be at least 4".into()));
    }
    let m = params.m();
    let t_max = spec.t_grid.iter().copied().fold(0.0, f64::max);
    let dt = spec.dt.unwrap_or_else(|| default_dt(t_max));
    let keep = Keep::Times(spec.t_grid.to_vec());
    let run = |x0: &[f64], seed: u64| {
        simulate_ensemble(
            &EnsembleSpec {
                params,
                x0,
                t_final: t_max,
                dt,
                n_paths: spec.n_paths,
                master_seed: seed,
            },
            &keep,
            exec,
        )
    };
    let ex = run(spec.x, spec.master_seed)?;
    let ey = run(spec.y, spec.master_seed.wrapping_add(1))?;
    let slot = |t: f64| {
        ex.times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .expect("retained times")
    };
    let bins = spec.bins_per_axis.clamp(1, MAX_BINS_PER_AXIS);
    let n = spec.n_paths;

    let replica = run(spec.x, spec.master_seed.wrapping_add(2))?;
    let floor = tv_distance(ex.snapshot(slot(t_max)), replica.terminal(), m, bins)?.tv;

    // cell indices are fixed per time so bootstrap replicates only recount
    let cells: Vec<(Vec<u64>, Vec<u64>)> = spec
        .t_grid
        .iter()
        .map(|&t| {
            let (a, b) = (ex.snapshot(slot(t)), ey.snapshot(slot(t)));
            let edges = quantile_edges(&[a, b], m, bins);
            (cell_indices(a, m, &edges), cell_indices(b, m, &edges))
        })
        .collect();
    let tvs: Vec<f64> = cells.iter().map(|(a, b)| tv_from_cells(a, b).0).collect();
    let usable: Vec<bool> = tvs.iter().map(|v| *v > 2.0 * floor && *v < 1.8).collect();
    let fit_of = |values: &[f64]| -> Option<(f64, f64)> {
        let (ts, ls): (Vec<f64>, Vec<f64>) = spec
            .t_grid
            .iter()
            .zip(values)
            .zip(&usable)
            .filter(|(_, u)| **u)
            .map(|((t, v), _)| (*t, v.max(f64::MIN_POSITIVE).ln()))
            .unzip();
        ls_fit(&ts, &ls)
    };
    let n_usable = usable.iter().filter(|u| **u).count();
    if n_usable < 3 {
        return Err(Error::DegenerateFit(format!(
            "only {n_usable} TV values lie in (2·floor, 1.8) with floor {floor:.4}"
        )));
    }
    let (slope, intercept) =
        fit_of(&tvs).ok_or_else(|| Error::DegenerateFit("constant t values".into()))?;

    let reps = spec.bootstrap.max(1);
    let boot: Vec<Vec<f64>> = exec.map(reps, |r| {
        let mut rng =
            ChaCha8Rng::seed_from_u64(spec.master_seed ^ 0x9e37_79b9_7f4a_7c15 ^ r as u64);
        let ia: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let ib: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        cells
            .iter()
            .map(|(a, b)| {
                let ra: Vec<u64> = ia.iter().map(|i| a[*i]).collect();
                let rb: Vec<u64> = ib.iter().map(|i| b[*i]).collect();
                tv_from_cells(&ra, &rb).0
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(tvs.len());
    for (i, &t) in spec.t_grid.iter().enumerate() {
        let mut col: Vec<f64> = boot.iter().map(|b| b[i]).collect();
        col.sort_by(f64::total_cmp);
        rows.push(DecayRow {
            t,
            tv: tvs[i],
            ci_lo: percentile(&col, 0.025),
            ci_hi: percentile(&col, 0.975),
            floor,
            used_in_fit: usable[i],
        });
    }
    let mut deltas: Vec<f64> = boot
        .iter()
        .filter_map(|b| fit_of(b))
        .map(|(s, _)| -s)
        .collect();
    deltas.sort_by(f64::total_cmp);
    let delta_ci = if deltas.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (percentile(&deltas, 0.025), percentile(&deltas, 0.975))
    };
    let mut order: Vec<usize> = (0..spec.t_grid.len()).collect();
    order.sort_by(|a, b| spec.t_grid[*a].total_cmp(&spec.t_grid[*b]));
    let monotonicity_violations = order
        .windows(2)
        .filter(|w| tvs[w[1]] > tvs[w[0]] + 2.0 * floor)
        .count();
    Ok(ErgodicityReport {
        rows,
        floor,
        delta_hat: -slope,
        delta_ci,
        intercept,
        monotonicity_violations,
        n_paths: n,
        dt: ex.dt,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DobrushinPair {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub tv: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DobrushinReport {
    pub max_tv: f64,
    /// `2 − max_tv`; positive values are consistent with a local Dobrushin condition.
    pub margin: f64,
    pub pairs: Vec<DobrushinPair>,
}

#[derive(Clone, Debug)]
pub struct DobrushinSpec<'a> {
    pub params: &'a ModelParams,
    /// Level `R` of the sublevel set `{V(x) + V(y) ≤ R}`.
    pub level: f64,
    pub horizon: f64,
    pub n_pairs: usize,
    pub n_paths: usize,
    pub master_seed: u64,
    pub dt: Option<f64>,
    pub bins_per_axis: usize,
}

/// Probes pairs in the sublevel set: the diagonal pair at the origin, the
/// extreme axis pairs, then uniform random pairs by rejection.
pub fn dobrushin_pairs(
    lyap: &LyapunovData,
    level: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let m = lyap.m.nrows();
    if !(level >= 2.0) {
        return Err(Error::InvalidArgument(format!(
            "level must be at least 2 (V ≥ 1), got {level}"
        )));
    }
    let mut out = vec![(vec![0.0; m], vec![0.0; m])];
    // V(x) ≤ level − 1 along e_k gives the largest reachable coordinate
    let reach = |k: usize| ((level - 1.0).powi(2) - 1.0).max(0.0).sqrt() / lyap.m[(k, k)].sqrt();
    for k in 0..m {
        let mut e = vec![0.0; m];
        e[k] = reach(k);
        if v_value(&e, lyap) + 1.0 <= level * (1.0 + 1e-12) {
            out.push((e, vec![0.0; m]));
        }
    }
    let bound = (level - 1.0) / lyap.c_star;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tries = 0usize;
    while out.len() < n_pairs && tries < 1_000_000 {
        tries += 1;
        let x: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * bound).collect();
        let y: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * bound).collect();
        if v_value(&x, lyap) + v_value(&y, lyap) <= level {
            out.push((x, y));
        }
    }
    out.truncate(n_pairs.max(1));
    Ok(out)
}

/// Largest estimated `‖Q_h(x,·) − Q_h(y,·)‖_TV` over probed pairs.
pub fn dobrushin_check(spec: &DobrushinSpec, exec: Exec) -> Result<DobrushinReport> {
    let params = spec.params;
    if !(spec.horizon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {}",
            spec.horizon
        )));
    }
    let lyap = solve_lyapunov(&params.beta)?;
    let m = params.m();
    let dt = spec.dt.unwrap_or_else(|| default_dt(spec.horizon));
    let pairs = dobrushin_pairs(&lyap, spec.level, spec.n_pairs, spec.master_seed)?;
    let mut out = Vec::with_capacity(pairs.len());
    for (i, (x, y)) in pairs.into_iter().enumerate() {
        let run = |x0: &[f64], seed: u64| {
            simulate_ensemble(
                &EnsembleSpec {
                    params,
                    x0,
                    t_final: spec.horizon,
                    dt,
                    n_paths: spec.n_paths,
                    master_seed: seed,
                },
                &Keep::Terminal,
                exec,
            )
        };
        let base = spec.master_seed.wrapping_add(2 * i as u64 + 1);
        let a = run(&x, base)?;
        let b = run(&y, base.wrapping_add(1))?;
        let tv = tv_distance(a.terminal(), b.terminal(), m, spec.bins_per_axis)?.tv;
        out.push(DobrushinPair {
            x,
            y,
            tv: tv.min(2.0),
        });
    }
    let max_tv = out.iter().map(|p| p.tv).fold(0.0, f64::max);
    Ok(DobrushinReport {
        max_tv,
        margin: 2.0 - max_tv,
        pairs: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lyapunov_of_minus_identity() {
        let l = solve_lyapunov(&(-DMatrix::<f64>::identity(2, 2))).unwrap();
        assert!((&l.m - DMatrix::<f64>::identity(2, 2) * 0.5).norm() < 1e-14);
        assert!(l.residual < 1e-14);
        assert!((v_value(&[1.0, 1.0], &l) - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(v_value(&[0.0, 0.0], &l), 1.0);
    }

    #[test]
    fn lyapunov_of_diagonal() {
        let beta = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let l = solve_lyapunov(&beta).unwrap();
        assert!((l.m[(0, 0)] - 0.5).abs() < 1e-14 && (l.m[(1, 1)] - 0.25).abs() < 1e-14);
        assert!(l.m[(0, 1)].abs() < 1e-14);
        assert!((l.c_star - 0.5).abs() < 1e-14 && (l.c_superstar - 0.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn lyapunov_rejects_supercritical() {
        let beta = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, -1.0]);
        assert!(matches!(
            solve_lyapunov(&beta),
            Err(Error::NotSubcritical(_))
        ));
    }

    #[test]
    fn tv_extremes() {
        let a = vec![0.0; 200];
        let b = vec![10.0; 200];
        assert_eq!(tv_distance(&a, &b, 2, 20).unwrap().tv, 2.0);
        assert_eq!(tv_distance(&a, &a, 2, 20).unwrap().tv, 0.0);
        assert!(tv_distance(&[], &a, 2, 20).is_err());
    }

    #[test]
    fn quantile_edges_are_equal_mass() {
        let s: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let e = quantile_edges(&[&s], 1, 4);
        assert_eq!(e[0], vec![25.0, 50.0, 75.0]);
        let idx = cell_indices(&s, 1, &e);
        assert_eq!(idx.iter().filter(|c| **c == 0).count(), 25);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.5), 2.0);
        assert!((percentile(&v, 0.1) - 0.4).abs() < 1e-15);
    }
}
