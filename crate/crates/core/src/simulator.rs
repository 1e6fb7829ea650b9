//! Euler-type path simulation, exact first moments, and the Monte-Carlo
//! experiments built on them.
//!
//! One step of size `dt` reads
//!
//! ```text
//! X_k' = max(0, X_k (1 + β_kk dt) + (σ_k X_k)^{1/α_k} ΔZ_k)
//!        + (b_k + Σ_{j≠k} β_kj X_j) dt + ΔJ_k
//! ```
//!
//! i.e. the plain Euler update with the clamp at 0 applied to the
//! self-driven part only. The cross terms are nonnegative, so the result is
//! nonnegative, agrees with the clamped Euler update whenever the self part
//! stays positive, and is nondecreasing in every coordinate of `X`. The last
//! property makes the diagonal-drift comparison hold pathwise under common
//! noise.
//!
//! Noise is drawn in a fixed order per step: `ΔZ_0, …, ΔZ_{m−1}`, then `ΔJ`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{kahan_sum, Exec};
use crate::levy_rng::{RngStream, SkewedStable, StableParams, SubordinatorSampler};
use crate::model::{check_condition_a, euler_rates, ModelParams};

/// Paths simulated per parallel work item.
const CHUNK: usize = 64;

/// Precomputed per-step samplers and coefficients for a fixed `dt`.
#[derive(Clone, Debug)]
pub struct StepKernel {
    m: usize,
    dt: f64,
    b: Vec<f64>,
    beta: DMatrix<f64>,
    sigma_root: Vec<f64>,
    inv_alpha: Vec<f64>,
    stable: Vec<SkewedStable>,
    jumps: SubordinatorSampler,
}

impl StepKernel {
    pub fn new(params: &ModelParams, dt: f64) -> Result<Self> {
        params.validate().structural()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dt must be positive, got {dt}"
            )));
        }
        let m = params.m();
        let stable = params
            .alpha
            .iter()
            .map(|&a| Ok(SkewedStable::spectrally_positive(StableParams::new(a)?, dt)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            m,
            dt,
            b: params.b.clone(),
            beta: params.beta.clone(),
            sigma_root: (0..m)
                .map(|k| params.sigma[k].powf(1.0 / params.alpha[k]))
                .collect(),
            inv_alpha: params.alpha.iter().map(|a| 1.0 / a).collect(),
            stable,
            jumps: SubordinatorSampler::new(&params.compiled_levy(), dt)?,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Draws `(ΔZ, ΔJ)` for one step.
    pub fn draw(&self, rng: &mut RngStream, dz: &mut [f64], dj: &mut [f64]) {
        for (z, s) in dz.iter_mut().zip(&self.stable) {
            *z = s.sample(rng);
        }
        self.jumps.sample_into(rng, dj);
    }

    /// Applies one step with given noise; `diagonal` drops the off-diagonal drift.
    pub fn apply(&self, x: &[f64], dz: &[f64], dj: &[f64], diagonal: bool, out: &mut [f64]) {
        for k in 0..self.m {
            let xk = x[k];
            let vol = if xk > 0.0 {
                self.sigma_root[k] * xk.powf(self.inv_alpha[k]) * dz[k]
            } else {
                0.0
            };
            let own = (xk * (1.0 + self.beta[(k, k)] * self.dt) + vol).max(0.0);
            let mut cross = self.b[k];
            if !diagonal {
                for j in 0..self.m {
                    if j != k {
                        cross += self.beta[(k, j)] * x[j];
                    }
                }
            }
            out[k] = own + cross * self.dt + dj[k];
        }
    }
}

/// One step from `x` with fresh noise.
pub fn euler_step(kernel: &StepKernel, x: &[f64], rng: &mut RngStream) -> Vec<f64> {
    let m = kernel.m();
    let mut dz = vec![0.0; m];
    let mut dj = vec![0.0; m];
    kernel.draw(rng, &mut dz, &mut dj);
    let mut out = vec![0.0; m];
    kernel.apply(x, &dz, &dj, false, &mut out);
    out
}

/// Which states an ensemble retains.
#[derive(Clone, Debug, PartialEq)]
pub enum Keep {
    Terminal,
    /// States at the grid points nearest to these times (and always the terminal one).
    Times(Vec<f64>),
    Full,
}

#[derive(Clone, Debug, Serialize)]
pub struct SamplePath {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stream_id: u64,
}

/// Retained states of `n_paths` independent paths, stored time-major:
/// `data[(time_index · n_paths + path) · m + k]`.
#[derive(Clone, Debug)]
pub struct PathEnsemble {
    pub m: usize,
    pub n_paths: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub master_seed: u64,
    pub times: Vec<f64>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MeanEstimate {
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
}

impl PathEnsemble {
    /// States of all paths at retained time `ti`, row-major `n_paths × m`.
    pub fn snapshot(&self, ti: usize) -> &[f64] {
        let w = self.n_paths * self.m;
        &self.data[ti * w..(ti + 1) * w]
    }

    pub fn terminal(&self) -> &[f64] {
        self.snapshot(self.times.len() - 1)
    }

    pub fn path(&self, p: usize) -> SamplePath {
        SamplePath {
            times: self.times.clone(),
            states: (0..self.times.len())
                .map(|ti| self.snapshot(ti)[p * self.m..(p + 1) * self.m].to_vec())
                .collect(),
            stream_id: p as u64,
        }
    }

    /// Per-coordinate sample mean and standard error at retained time `ti`.
    pub fn mean_at(&self, ti: usize) -> MeanEstimate {
        snapshot_mean(self.snapshot(ti), self.m)
    }

    pub fn terminal_mean(&self) -> MeanEstimate {
        self.mean_at(self.times.len() - 1)
    }
}

/// Kahan-summed mean and standard error of each column of a row-major sample.
pub fn snapshot_mean(rows: &[f64], m: usize) -> MeanEstimate {
    let n = rows.len() / m;
    let mut mean = Vec::with_capacity(m);
    let mut std_err = Vec::with_capacity(m);
    for k in 0..m {
        let col = || rows.iter().skip(k).step_by(m).copied();
        let mu = kahan_sum(col()) / n as f64;
        let var = kahan_sum(col().map(|v| (v - mu) * (v - mu))) / (n as f64 - 1.0).max(1.0);
        mean.push(mu);
        std_err.push((var / n as f64).sqrt());
    }
    MeanEstimate { mean, std_err }
}

/// Time discretization: `n_steps` equal steps of size `≤ dt` ending exactly at `t_final`.
pub fn step_grid(t_final: f64, dt: f64) -> Result<(usize, f64)> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "T must be positive, got {t_final}"
        )));
    }
    if !(dt > 0.0 && dt <= t_final) {
        return Err(Error::InvalidArgument(format!(
            "dt must lie in (0, T], got {dt}"
        )));
    }
    let ratio = t_final / dt;
    let n = if (ratio - ratio.round()).abs() < 1e-9 * ratio {
        ratio.round()
    } else {
        ratio.ceil()
    } as usize;
    Ok((n, t_final / n as f64))
}

/// Step size used when none is given: `min(0.01, T/1000)`.
pub fn default_dt(t_final: f64) -> f64 {
    (t_final / 1000.0).min(0.01)
}

fn check_start(x0: &[f64], m: usize) -> Result<()> {
    if x0.len() != m {
        return Err(Error::InvalidArgument(format!(
            "x0 has length {} (expected {m})",
            x0.len()
        )));
    }
    if x0.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(
            "x0 must be finite and nonnegative".into(),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct EnsembleSpec<'a> {
    pub params: &'a ModelParams,
    pub x0: &'a [f64],
    pub t_final: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub master_seed: u64,
}

impl EnsembleSpec<'_> {
    fn prepare(&self, keep: &Keep) -> Result<(StepKernel, usize, Vec<usize>)> {
        if self.n_paths == 0 {
            return Err(Error::InvalidArgument("n_paths must be positive".into()));
        }
        check_start(self.x0, self.params.m())?;
        let (n_steps, dt) = step_grid(self.t_final, self.dt)?;
        let kernel = StepKernel::new(self.params, dt)?;
        let mut idx: Vec<usize> = match keep {
            Keep::Terminal => vec![n_steps],
            Keep::Full => (0..=n_steps).collect(),
            Keep::Times(ts) => {
                if ts
                    .iter()
                    .any(|t| !(*t >= 0.0 && *t <= self.t_final * (1.0 + 1e-12)))
                {
                    return Err(Error::InvalidArgument(
                        "snapshot times must lie in [0, T]".into(),
                    ));
                }
                let mut v: Vec<usize> = ts
                    .iter()
                    .map(|t| ((t / dt).round() as usize).min(n_steps))
                    .collect();
                v.push(n_steps);
                v
            }
        };
        idx.sort_unstable();
        idx.dedup();
        Ok((kernel, n_steps, idx))
    }
}

/// Simulates one path with stream `stream_id`, returning the states at the
/// step indices in `keep_idx` (sorted), flattened.
fn run_path(
    kernel: &StepKernel,
    x0: &[f64],
    n_steps: usize,
    keep_idx: &[usize],
    seed: u64,
    stream_id: u64,
) -> Vec<f64> {
    let m = kernel.m();
    let mut rng = RngStream::new(seed, stream_id);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; m];
    let mut dz = vec![0.0; m];
    let mut dj = vec![0.0; m];
    let mut out = Vec::with_capacity(keep_idx.len() * m);
    let mut ki = 0;
    for step in 0..=n_steps {
        if step > 0 {
            kernel.draw(&mut rng, &mut dz, &mut dj);
            kernel.apply(&x, &dz, &dj, false, &mut next);
            std::mem::swap(&mut x, &mut next);
        }
        while ki < keep_idx.len() && keep_idx[ki] == step {
            out.extend_from_slice(&x);
            ki += 1;
        }
    }
    out
}

fn assemble(per_path: Vec<Vec<f64>>, m: usize, n_times: usize) -> Vec<f64> {
    let n = per_path.len();
    let mut data = vec![0.0; n * n_times * m];
    for (p, v) in per_path.iter().enumerate() {
        for ti in 0..n_times {
            let dst = (ti * n + p) * m;
            data[dst..dst + m].copy_from_slice(&v[ti * m..(ti + 1) * m]);
        }
    }
    data
}

/// `n_paths` independent paths, path `p` driven by `RngStream(master_seed, p)`.
pub fn simulate_ensemble(spec: &EnsembleSpec, keep: &Keep, exec: Exec) -> Result<PathEnsemble> {
    let (kernel, n_steps, idx) = spec.prepare(keep)?;
    let m = kernel.m();
    let per_path = exec.map_chunks(spec.n_paths, CHUNK, |range| {
        range
            .map(|p| run_path(&kernel, spec.x0, n_steps, &idx, spec.master_seed, p as u64))
            .collect()
    });
    Ok(PathEnsemble {
        m,
        n_paths: spec.n_paths,
        dt: kernel.dt(),
        n_steps,
        master_seed: spec.master_seed,
        times: idx.iter().map(|&i| i as f64 * kernel.dt()).collect(),
        data: assemble(per_path, m, idx.len()),
    })
}

/// The comparison process: same model with `β` replaced by its diagonal.
pub fn simulate_comparison_diagonal(
    spec: &EnsembleSpec,
    keep: &Keep,
    exec: Exec,
) -> Result<PathEnsemble> {
    let diag = spec.params.diagonal();
    simulate_ensemble(
        &EnsembleSpec {
            params: &diag,
            ..spec.clone()
        },
        keep,
        exec,
    )
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    /// Fraction of (path, grid point, coordinate) triples with `X_k ≥ Y_k − 1e−12`.
    pub fraction_ordered: f64,
    pub worst_gap: f64,
    pub checked: usize,
}

/// Runs the full and the diagonal-drift process on common noise and checks `X ≥ Y` at every step.
pub fn comparison_under_common_noise(spec: &EnsembleSpec, exec: Exec) -> Result<ComparisonReport> {
    let (kernel, n_steps, _) = spec.prepare(&Keep::Terminal)?;
    let m = kernel.m();
    let per_path = exec.map(spec.n_paths, |p| {
        let mut rng = RngStream::new(spec.master_seed, p as u64);
        let mut x = spec.x0.to_vec();
        let mut y = spec.x0.to_vec();
        let mut buf = vec![0.0; m];
        let mut dz = vec![0.0; m];
        let mut dj = vec![0.0; m];
        let (mut ok, mut worst) = (0usize, f64::INFINITY);
        for _ in 0..n_steps {
            kernel.draw(&mut rng, &mut dz, &mut dj);
            kernel.apply(&x, &dz, &dj, false, &mut buf);
            std::mem::swap(&mut x, &mut buf);
            kernel.apply(&y, &dz, &dj, true, &mut buf);
            std::mem::swap(&mut y, &mut buf);
            for k in 0..m {
                let gap = x[k] - y[k];
                worst = worst.min(gap);
                if gap >= -1e-12 {
                    ok += 1;
                }
            }
        }
        (ok, worst)
    });
    let checked = spec.n_paths * n_steps * m;
    let ok: usize = per_path.iter().map(|r| r.0).sum();
    Ok(ComparisonReport {
        fraction_ordered: ok as f64 / checked.max(1) as f64,
        worst_gap: per_path.iter().map(|r| r.1).fold(f64::INFINITY, f64::min),
        checked,
    })
}

/// `E[X^x(t)] = e^{βt}x + ∫_0^t e^{βs} ds (b + ∫ z ν(dz))`, the integral read
/// off the exponential of the augmented matrix `[[β, b̃], [0, 0]]`.
pub fn mean_formula(params: &ModelParams, x: &[f64], t: f64) -> Result<Vec<f64>> {
    params.validate().structural()?;
    let m = params.m();
    check_start(x, m)?;
    let jump_mean = params.compiled_levy().first_moment()?;
    let mut aug = DMatrix::<f64>::zeros(m + 1, m + 1);
    for i in 0..m {
        for j in 0..m {
            aug[(i, j)] = params.beta[(i, j)] * t;
        }
        aug[(i, m)] = (params.b[i] + jump_mean[i]) * t;
    }
    let e = aug.exp();
    Ok((0..m)
        .map(|i| (0..m).map(|j| e[(i, j)] * x[j]).sum::<f64>() + e[(i, m)])
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct EmpiricalChar {
    pub y: Vec<f64>,
    pub value: Complex64,
    /// Jackknife standard error of the complex mean, `sqrt(SE_re² + SE_im²)`.
    pub std_err: f64,
}

/// `mean exp(i⟨y, X⟩)` over row-major samples, for each probe `y`.
pub fn empirical_char(samples: &[f64], m: usize, probes: &[Vec<f64>]) -> Vec<EmpiricalChar> {
    let n = samples.len() / m;
    probes
        .iter()
        .map(|y| {
            let phase = |row: &[f64]| row.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
            let rows = || samples.chunks_exact(m).map(phase);
            let re = kahan_sum(rows().map(f64::cos)) / n as f64;
            let im = kahan_sum(rows().map(f64::sin)) / n as f64;
            // the jackknife variance of a sample mean is s²/n in closed form
            let ss = kahan_sum(rows().map(|p| {
                let (s, c) = p.sin_cos();
                (c - re).powi(2) + (s - im).powi(2)
            }));
            let var = ss / (n as f64 - 1.0).max(1.0);
            EmpiricalChar {
                y: y.clone(),
                value: Complex64::new(re, im),
                std_err: (var / n as f64).sqrt(),
            }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundaryRow {
    pub eps: f64,
    pub hits: usize,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundaryReport {
    pub rows: Vec<BoundaryRow>,
    /// Least-squares slope of `log estimate` on `log ε` over rows with hits.
    pub slope: Option<f64>,
    pub n_paths: usize,
    pub condition_a: Option<bool>,
}

/// Wilson score interval at 95 %.
pub fn wilson_interval(hits: usize, n: usize) -> (f64, f64) {
    let z = 1.959_963_984_540_054;
    let n = n as f64;
    let p = hits as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    let lo = if hits == 0 {
        0.0
    } else {
        (centre - half).max(0.0)
    };
    let hi = if hits as f64 == n {
        1.0
    } else {
        (centre + half).min(1.0)
    };
    (lo, hi)
}

/// Least-squares slope and intercept of `y` on `x`.
pub fn ls_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Monte-Carlo `P[min_k X_k(t) ≤ ε]` per `ε`.
pub fn boundary_hit_probability(
    spec: &EnsembleSpec,
    eps_list: &[f64],
    exec: Exec,
) -> Result<BoundaryReport> {
    if eps_list.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::InvalidArgument(
            "eps values must be nonnegative".into(),
        ));
    }
    let condition_a = match check_condition_a(spec.params, &default_condition_grid(), None) {
        Ok(r) => {
            if !r.overall {
                log::warn!("the immigration condition does not hold for this model");
            }
            Some(r.overall)
        }
        Err(e) => {
            log::warn!("the immigration condition could not be checked: {e}");
            None
        }
    };
    let ens = simulate_ensemble(spec, &Keep::Terminal, exec)?;
    let mins: Vec<f64> = ens
        .terminal()
        .chunks_exact(ens.m)
        .map(|r| r.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let rows: Vec<BoundaryRow> = eps_list
        .iter()
        .map(|&eps| {
            let hits = mins.iter().filter(|v| **v <= eps).count();
            let (ci_lo, ci_hi) = wilson_interval(hits, mins.len());
            BoundaryRow {
                eps,
                hits,
                estimate: hits as f64 / mins.len() as f64,
                ci_lo,
                ci_hi,
            }
        })
        .collect();
    let (lx, ly): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.hits > 0 && r.eps > 0.0)
        .map(|r| (r.eps.ln(), r.estimate.ln()))
        .unzip();
    Ok(BoundaryReport {
        slope: ls_fit(&lx, &ly).map(|f| f.0),
        rows,
        n_paths: spec.n_paths,
        condition_a,
    })
}

/// `ξ ∈ [10^{-1}, 10^4]`, 40 log-spaced points.
pub fn default_condition_grid() -> Vec<f64> {
    (0..40)
        .map(|i| 10f64.powf(-1.0 + 5.0 * i as f64 / 39.0))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct RateCoordinate {
    pub k: usize,
    /// `E|X_k(t) − X_k^ε(t)|^η` per ε.
    pub moments: Vec<f64>,
    pub std_err: Vec<f64>,
    pub fitted_exponent: f64,
    pub target: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RateReport {
    pub eps: Vec<f64>,
    pub eta: f64,
    pub dt_ref: f64,
    pub coordinates: Vec<RateCoordinate>,
}

#[derive(Clone, Debug)]
pub struct RateSpec<'a> {
    pub params: &'a ModelParams,
    pub x0: &'a [f64],
    pub t: f64,
    pub eps: &'a [f64],
    pub eta: f64,
    pub n_paths: usize,
    pub master_seed: u64,
    /// Reference steps per smallest ε.
    pub substeps: usize,
}

/// Couples a fine-grid reference path with the one-step frozen approximation
/// `X^ε(t) = X(t−ε) + (b + βX(t−ε))ε + (σX(t−ε))^{1/α}(Z(t)−Z(t−ε)) + J(t)−J(t−ε)`
/// built from the same increments, and regresses `log E|ΔX_k|^η` on `log ε`.
pub fn weak_error_rate_experiment(spec: &RateSpec, exec: Exec) -> Result<RateReport> {
    let p = spec.params;
    let m = p.m();
    check_start(spec.x0, m)?;
    if !(spec.eta > 0.0 && spec.eta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "eta must lie in (0,1), got {}",
            spec.eta
        )));
    }
    if spec.eps.len() < 2
        || spec.eps.windows(2).any(|w| w[1] >= w[0])
        || spec.eps[0] >= spec.t.min(1.0)
    {
        return Err(Error::InvalidArgument(
            "eps grid must have ≥ 2 strictly decreasing values in (0, 1 ∧ t)".into(),
        ));
    }
    if spec.n_paths < 2 {
        return Err(Error::InvalidArgument("n_paths must be at least 2".into()));
    }
    let dt_ref = spec.eps[spec.eps.len() - 1] / spec.substeps.max(1) as f64;
    let n_steps = (spec.t / dt_ref).round() as usize;
    let lag: Vec<usize> = spec
        .eps
        .iter()
        .map(|e| (e / dt_ref).round() as usize)
        .collect();
    if lag
        .iter()
        .zip(spec.eps)
        .any(|(l, e)| (*l as f64 * dt_ref - e).abs() > 1e-9 * e)
        || (n_steps as f64 * dt_ref - spec.t).abs() > 1e-9 * spec.t
    {
        return Err(Error::InvalidArgument(
            "t and every ε must be integer multiples of the reference step".into(),
        ));
    }
    let kernel = StepKernel::new(p, dt_ref)?;
    let sigma_root: Vec<f64> = (0..m).map(|k| p.sigma[k].powf(1.0 / p.alpha[k])).collect();
    let n_eps = spec.eps.len();
    // per path: |ΔX_k|^η for each (ε, k)
    let per_path: Vec<Vec<f64>> = exec.map_chunks(spec.n_paths, CHUNK, |range| {
        range
            .map(|path| {
                let mut rng = RngStream::new(spec.master_seed, path as u64);
                let mut x = spec.x0.to_vec();
                let mut buf = vec![0.0; m];
                let mut dz = vec![0.0; m];
                let mut dj = vec![0.0; m];
                // state at t − ε and accumulated increments since then
                let mut frozen: Vec<Option<Vec<f64>>> = vec![None; n_eps];
                let mut acc_z = vec![vec![0.0; m]; n_eps];
                let mut acc_j = vec![vec![0.0; m]; n_eps];
                for step in 0..n_steps {
                    for (e, &l) in lag.iter().enumerate() {
                        if step == n_steps - l {
                            frozen[e] = Some(x.clone());
                        }
                    }
                    kernel.draw(&mut rng, &mut dz, &mut dj);
                    for e in 0..n_eps {
                        if frozen[e].is_some() {
                            for k in 0..m {
                                acc_z[e][k] += dz[k];
                                acc_j[e][k] += dj[k];
                            }
                        }
                    }
                    kernel.apply(&x, &dz, &dj, false, &mut buf);
                    std::mem::swap(&mut x, &mut buf);
                }
                let mut out = Vec::with_capacity(n_eps * m);
                for e in 0..n_eps {
                    let xf = frozen[e].as_ref().expect("every lag is reached");
                    let eps = spec.eps[e];
                    for k in 0..m {
                        let drift = p.b[k] + (0..m).map(|j| p.beta[(k, j)] * xf[j]).sum::<f64>();
                        let approx = xf[k]
                            + drift * eps
                            + sigma_root[k] * xf[k].powf(1.0 / p.alpha[k]) * acc_z[e][k]
                            + acc_j[e][k];
                        out.push((x[k] - approx).abs().powf(spec.eta));
                    }
                }
                out
            })
            .collect()
    });
    let rates = euler_rates(&p.alpha);
    let mut coordinates = Vec::with_capacity(m);
    for k in 0..m {
        let mut moments = Vec::with_capacity(n_eps);
        let mut std_err = Vec::with_capacity(n_eps);
        for e in 0..n_eps {
            let rows: Vec<f64> = per_path.iter().map(|v| v[e * m + k]).collect();
            let est = snapshot_mean(&rows, 1);
            moments.push(est.mean[0]);
            std_err.push(est.std_err[0]);
        }
        // differences at roundoff level (≈ 1e−12 relative) count as exact agreement
        let scale = 1.0 + spec.x0.iter().fold(0.0f64, |a, v| a.max(*v));
        let floor = (1e-12 * scale).powf(spec.eta);
        if moments.iter().any(|v| !(*v > floor)) {
            return Err(Error::DegenerateFit(format!(
                "coordinate {k}: the approximation error vanishes for some ε, no exponent to fit"
            )));
        }
        let lx: Vec<f64> = spec.eps.iter().map(|e| e.ln()).collect();
        let ly: Vec<f64> = moments.iter().map(|v| v.ln()).collect();
        let (slope, _) =
            ls_fit(&lx, &ly).ok_or_else(|| Error::DegenerateFit("ε grid is degenerate".into()))?;
        coordinates.push(RateCoordinate {
            k,
            moments,
            std_err,
            fitted_exponent: slope,
            target: spec.eta * rates[k],
        });
    }
    Ok(RateReport {
        eps: spec.eps.to_vec(),
        eta: spec.eta,
        dt_ref,
        coordinates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LevyMeasureSpec;

    fn zero_model(m: usize) -> ModelParams {
        ModelParams::new(
            vec![0.0; m],
            DMatrix::zeros(m, m),
            vec![0.0; m],
            vec![1.5; m],
            LevyMeasureSpec::Zero,
        )
    }

    #[test]
    fn all_zero_model_is_static() {
        let k = StepKernel::new(&zero_model(2), 0.1).unwrap();
        let mut rng = RngStream::new(1, 0);
        assert_eq!(euler_step(&k, &[0.3, 2.0], &mut rng), vec![0.3, 2.0]);
    }

    #[test]
    fn boundary_volatility_vanishes() {
        let p = ModelParams::new(
            vec![1.0],
            DMatrix::zeros(1, 1),
            vec![3.0],
            vec![1.5],
            LevyMeasureSpec::Zero,
        );
        let k = StepKernel::new(&p, 0.1).unwrap();
        let mut rng = RngStream::new(1, 0);
        let x = euler_step(&k, &[0.0], &mut rng);
        assert!((x[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn step_grid_rounding() {
        assert_eq!(step_grid(1.0, 5e-3).unwrap().0, 200);
        let (n, dt) = step_grid(1.0, 0.3).unwrap();
        assert_eq!(n, 4);
        assert!((dt - 0.25).abs() < 1e-15);
        assert!(step_grid(1.0, 2.0).is_err());
    }

    #[test]
    fn mean_formula_trivial_cases() {
        let mut p = zero_model(2);
        p.beta = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.5, -2.0]);
        let got = mean_formula(&p, &[1.0, 2.0], 0.7).unwrap();
        let e = (p.beta.clone() * 0.7).exp();
        for i in 0..2 {
            let want = e[(i, 0)] + 2.0 * e[(i, 1)];
            assert!((got[i] - want).abs() < 1e-14);
        }
        let mut q = zero_model(1);
        q.b = vec![0.4];
        q.levy = LevyMeasureSpec::CompoundPoisson {
            rate: 2.0,
            jump: crate::model::JumpDistribution::Point { jump: vec![0.5] },
        };
        let got = mean_formula(&q, &[1.0], 3.0).unwrap();
        assert!((got[0] - (1.0 + 3.0 * (0.4 + 1.0))).abs() < 1e-13);
    }

    #[test]
    fn mean_formula_requires_first_moment() {
        let mut p = zero_model(1);
        p.levy = LevyMeasureSpec::CoordinateStable {
            theta: vec![0.6],
            weight: vec![1.0],
        };
        assert!(matches!(
            mean_formula(&p, &[1.0], 1.0),
            Err(Error::NoFirstMoment(_))
        ));
    }

    #[test]
    fn empirical_char_at_zero() {
        let s = vec![0.5, 1.0, 2.0, 3.0];
        let r = empirical_char(&s, 2, &[vec![0.0, 0.0]]);
        assert_eq!(r[0].value, Complex64::new(1.0, 0.0));
        assert_eq!(r[0].std_err, 0.0);
    }

    #[test]
    fn wilson_contains_estimate() {
        let (lo, hi) = wilson_interval(30, 1000);
        assert!(lo < 0.03 && hi > 0.03 && lo > 0.0);
        assert_eq!(wilson_interval(0, 100).0, 0.0);
    }
}
