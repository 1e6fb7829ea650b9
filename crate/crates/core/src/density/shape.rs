use serde::Serialize;

use super::{anisotropy, besov_norm, default_h_set, weighted_kde};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::ModelParams;
use crate::numerics::fourier::Axis;
use crate::simulator::{default_dt, ls_fit, simulate_ensemble, EnsembleSpec, Keep};

/// Shape check of `‖ρ_δ p_t(x,·)‖_{B^{λ,a}_{1,∞}} ≲ (1+|x|)^κ (1∧t)^{−1/α_min}`
/// from simulated terminal states.
#[derive(Clone, Debug)]
pub struct BesovShapeSpec<'a> {
    pub params: &'a ModelParams,
    /// Base point `x̄`; the x-sweep uses `s·x̄` for each scaling `s`.
    pub x_bar: &'a [f64],
    pub x_scalings: &'a [f64],
    pub t_fixed: f64,
    pub times: &'a [f64],
    pub delta: f64,
    /// Smoothness orders; the first one drives the pass/fail summary.
    pub lambdas: &'a [f64],
    pub n_paths: usize,
    pub dt: Option<f64>,
    pub axes: &'a [Axis],
    pub h_min: f64,
    pub master_seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BesovRow {
    pub sweep: &'static str,
    pub x_scale: f64,
    pub x_norm: f64,
    pub t: f64,
    pub lambda: f64,
    pub norm: f64,
    /// `norm · (1∧t)^{1/α_min}`
    pub rescaled: f64,
    pub grid_mass: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BesovShapeReport {
    pub rows: Vec<BesovRow>,
    pub alpha_min: f64,
    /// Per λ: log-log slope of the norm against `1 + |x|`.
    pub x_slopes: Vec<(f64, f64)>,
    /// Per λ: max/min of the rescaled norms over the t-sweep.
    pub t_band: Vec<(f64, f64)>,
}

pub fn besov_shape_experiment(spec: &BesovShapeSpec, exec: Exec) -> Result<BesovShapeReport> {
    let p = spec.params;
    p.validate().structural()?;
    let m = p.m();
    if spec.x_bar.len() != m || spec.axes.len() != m {
        return Err(Error::InvalidArgument(format!(
            "x_bar and axes must have {m} entries"
        )));
    }
    if spec.lambdas.is_empty() || spec.x_scalings.len() < 2 || spec.times.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one λ, two x scalings and one time".into(),
        ));
    }
    let aniso = anisotropy(&p.alpha)?;
    let alpha_min = p.alpha.iter().copied().fold(f64::INFINITY, f64::min);
    let hs = default_h_set(spec.h_min);
    let norm_of = |x0: &[f64], t: f64, seed: u64| -> Result<(Vec<f64>, f64)> {
        let dt = spec.dt.unwrap_or_else(|| default_dt(t)).min(t);
        let ens = simulate_ensemble(
            &EnsembleSpec {
                params: p,
                x0,
                t_final: t,
                dt,
                n_paths: spec.n_paths,
                master_seed: seed,
            },
            &Keep::Terminal,
            exec,
        )?;
        let grid = weighted_kde(ens.terminal(), m, spec.delta, &p.alpha, spec.axes, None)?;
        let mass = grid.integral();
        let norms = spec
            .lambdas
            .iter()
            .map(|l| besov_norm(&grid, *l, &aniso, &hs))
            .collect::<Result<Vec<_>>>()?;
        Ok((norms, mass))
    };
    let mut rows = Vec::new();
    let mut push = |sweep, s: f64, x0: &[f64], t: f64, norms: Vec<f64>, mass: f64| {
        let x_norm = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (l, n) in spec.lambdas.iter().zip(norms) {
            rows.push(BesovRow {
                sweep,
                x_scale: s,
                x_norm,
                t,
                lambda: *l,
                norm: n,
                rescaled: n * t.min(1.0).powf(1.0 / alpha_min),
                grid_mass: mass,
            });
        }
    };
    for (i, &s) in spec.x_scalings.iter().enumerate() {
        let x0: Vec<f64> = spec.x_bar.iter().map(|v| v * s).collect();
        let (norms, mass) = norm_of(&x0, spec.t_fixed, spec.master_seed.wrapping_add(i as u64))?;
        push("x", s, &x0, spec.t_fixed, norms, mass);
    }
    for (i, &t) in spec.times.iter().enumerate() {
        let seed = spec.master_seed.wrapping_add(1000 + i as u64);
        let (norms, mass) = norm_of(spec.x_bar, t, seed)?;
        push("t", 1.0, spec.x_bar, t, norms, mass);
    }
    let mut x_slopes = Vec::new();
    let mut t_band = Vec::new();
    for &l in spec.lambdas {
        let xs: Vec<&BesovRow> = rows
            .iter()
            .filter(|r| r.sweep == "x" && r.lambda == l)
            .collect();
        let lx: Vec<f64> = xs.iter().map(|r| (1.0 + r.x_norm).ln()).collect();
        let ly: Vec<f64> = xs.iter().map(|r| r.norm.ln()).collect();
        let slope = ls_fit(&lx, &ly).map(|f| f.0).ok_or_else(|| {
            Error::DegenerateFit("x scalings give a single value of 1 + |x|".into())
        })?;
        x_slopes.push((l, slope));
        let ts: Vec<f64> = rows
            .iter()
            .filter(|r| r.sweep == "t" && r.lambda == l)
            .map(|r| r.rescaled)
            .collect();
        let hi = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = ts.iter().copied().fold(f64::INFINITY, f64::min);
        t_band.push((l, hi / lo));
    }
    Ok(BesovShapeReport {
        rows,
        alpha_min,
        x_slopes,
        t_band,
    })
}
