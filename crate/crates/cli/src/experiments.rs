//! One function per subcommand: read knobs, call the library, write artifacts.

use jcir::density::{
    anisotropy, besov_shape_experiment, heat_kernel_derivative_1d, invariant_density_1d,
    BesovShapeSpec, InversionOptions,
};
use jcir::ergodic::{
    dobrushin_check, drift_certificate, drift_grid, ergodicity_experiment, solve_lyapunov,
    DobrushinSpec, ErgodicitySpec,
};
use jcir::model::{check_condition_a, ModelParams};
use jcir::numerics::fourier::Axis;
use jcir::riccati::{
    char_function, closed_form_psi_1d, solve_riccati, write_trajectory_csv, RiccatiOptions,
};
use jcir::simulator::{
    boundary_hit_probability, default_condition_grid, default_dt, empirical_char, mean_formula,
    simulate_ensemble, weak_error_rate_experiment, EnsembleSpec, Keep, RateSpec,
};
use jcir::Exec;
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::config::{knob, knobs, LoadedConfig};
use crate::error::CliError;
use crate::output::{num, write_dump, RunDir};

pub struct Context<'a> {
    pub params: &'a ModelParams,
    pub seed: u64,
    pub exec: Exec,
}

/// Resolved knobs of the configured experiment, in TOML form.
pub fn resolve(cfg: &LoadedConfig) -> Result<toml::Table, CliError> {
    fn r<T: DeserializeOwned + Serialize>(cfg: &LoadedConfig) -> Result<toml::Table, CliError> {
        knobs::<T>(&cfg.experiment, &cfg.section).map(|(_, t)| t)
    }
    match cfg.experiment.as_str() {
        "simulate" => r::<knob::Simulate>(cfg),
        "riccati-check" => r::<knob::RiccatiCheck>(cfg),
        "density1d" => r::<knob::Density1d>(cfg),
        "invariant1d" => r::<knob::Invariant1d>(cfg),
        "condition-a" => r::<knob::ConditionA>(cfg),
        "rates" => r::<knob::Rates>(cfg),
        "boundary" => r::<knob::Boundary>(cfg),
        "lyapunov" => r::<knob::Lyapunov>(cfg),
        "ergodicity" => r::<knob::Ergodicity>(cfg),
        "besov" => r::<knob::Besov>(cfg),
        "dobrushin" => r::<knob::Dobrushin>(cfg),
        other => Err(CliError::Config(format!("unknown experiment `{other}`"))),
    }
}

/// Runs the experiment and returns its JSON report (also written to `report.json`).
pub fn run(
    name: &str,
    knobs: &toml::Table,
    ctx: &Context,
    out: &mut RunDir,
) -> Result<serde_json::Value, CliError> {
    fn k<T: DeserializeOwned + Serialize>(name: &str, t: &toml::Table) -> Result<T, CliError> {
        crate::config::knobs::<T>(name, t).map(|(k, _)| k)
    }
    let report = match name {
        "simulate" => simulate(&k(name, knobs)?, ctx, out)?,
        "riccati-check" => riccati_check(&k(name, knobs)?, ctx, out)?,
        "density1d" => density1d(&k(name, knobs)?, ctx, out)?,
        "invariant1d" => invariant1d(&k(name, knobs)?, ctx, out)?,
        "condition-a" => condition_a(&k(name, knobs)?, ctx, out)?,
        "rates" => rates(&k(name, knobs)?, ctx, out)?,
        "boundary" => boundary(&k(name, knobs)?, ctx, out)?,
        "lyapunov" => lyapunov(&k(name, knobs)?, ctx, out)?,
        "ergodicity" => ergodicity(&k(name, knobs)?, ctx, out)?,
        "besov" => besov(&k(name, knobs)?, ctx, out)?,
        "dobrushin" => dobrushin(&k(name, knobs)?, ctx, out)?,
        other => return Err(CliError::Config(format!("unknown experiment `{other}`"))),
    };
    out.json("report.json", &report)?;
    Ok(report)
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Core(jcir::Error::InvalidArgument(msg.into()))
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn simulate(
    k: &knob::Simulate,
    ctx: &Context,
    out: &mut RunDir,
) -> Result<serde_json::Value, CliError> {
    let p = ctx.params;
    let m = p.m();
    if k.n_paths == 0 {
        return Err(invalid("n_paths must be positive"));
    }
    if k.snapshots == 0 || k.quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
        return Err(invalid(
            "snapshots must be positive and quantiles must lie in [0, 1]",
        ));
    }
    if k.char_probes.iter().any(|y| y.len() != m) {
        return Err(invalid(format!("every char probe needs {m} coordinates")));
    }
    let dt = k.dt.unwrap_or_else(|| default_dt(k.t));
    let times: Vec<f64> = (1..=k.snapshots)
        .map(|i| k.t * i as f64 / k.snapshots as f64)
        .collect();
    let spec = EnsembleSpec {
        params: p,
        x0: &k.x0,
        t_final: k.t,
        dt,
        n_paths: k.n_paths,
        master_seed: ctx.seed,
    };
    let ens = simulate_ensemble(&spec, &Keep::Times(times), ctx.exec)?;

    let mut header = vec![
        "t".to_string(),
        "coordinate".into(),
        "mean".into(),
        "std_err".into(),
    ];
    header.extend(k.quantiles.iter().map(|q| format!("q{q}")));
    let mut records = Vec::new();
    for (ti, &t) in ens.times.iter().enumerate() {
        let snap = ens.snapshot(ti);
        let est = ens.mean_at(ti);
        for c in 0..m {
            let mut col: Vec<f64> = snap.iter().skip(c).step_by(m).copied().collect();
            col.sort_by(f64::total_cmp);
            let mut r = vec![num(t), c.to_string(), num(est.mean[c]), num(est.std_err[c])];
            r.extend(k.quantiles.iter().map(|q| num(quantile_sorted(&col, *q))));
            records.push(r);
        }
    }
    out.table("summary.csv", &header, records)?;

    let terminal = ens.terminal_mean();
    let formula = mean_formula(p, &k.x0, k.t)?;
    let z: Vec<f64> = (0..m)
        .map(|c| (terminal.mean[c] - formula[c]) / terminal.std_err[c])
        .collect();
    out.table(
        "mean.csv",
        &["coordinate", "sample_mean", "std_err", "formula", "z"].map(String::from),
        (0..m).map(|c| {
            vec![
                c.to_string(),
                num(terminal.mean[c]),
                num(terminal.std_err[c]),
                num(formula[c]),
                num(z[c]),
            ]
        }),
    )?;
    out.note(format!(
        "{} paths, dt = {}, {} steps; terminal mean {:?}, formula {:?}",
        k.n_paths, ens.dt, ens.n_steps, terminal.mean, formula
    ));

    let mut max_z_char = None;
    if !k.char_probes.is_empty() {
        let emp = empirical_char(ens.terminal(), m, &k.char_probes);
        let opts = RiccatiOptions::default();
        let mut header: Vec<String> = (0..m).map(|j| format!("y{j}")).collect();
        header
            .extend(["emp_re", "emp_im", "std_err", "model_re", "model_im", "z"].map(String::from));
        let mut records = Vec::new();
        let mut worst = 0.0f64;
        for e in &emp {
            let u: Vec<Complex64> = e.y.iter().map(|y| Complex64::new(0.0, *y)).collect();
            let model = char_function(p, &k.x0, k.t, &u, &opts)?.value;
            let z = if e.std_err > 0.0 {
                (e.value - model).norm() / e.std_err
            } else {
                (e.value - model).norm() / f64::EPSILON
            };
            worst = worst.max(z);
            let mut r: Vec<String> = e.y.iter().map(|v| num(*v)).collect();
            r.extend([e.value.re, e.value.im, e.std_err, model.re, model.im, z].map(num));
            records.push(r);
        }
        out.table("char.csv", &header, records)?;
        out.note(format!(
            "characteristic function: max |emp − model| / SE = {worst:.3}"
        ));
        max_z_char = Some(worst);
    }
    if k.dump_terminal {
        let path = out.path("terminal.bin");
        write_dump(&path, m, k.n_paths, ctx.seed, ens.terminal())?;
    }
    Ok(json!({
        "n_paths": k.n_paths,
        "dt": ens.dt,
        "n_steps": ens.n_steps,
        "terminal_mean": terminal.mean,
        "terminal_std_err": terminal.std_err,
        "mean_formula": formula,
        "mean_z": z,
        "char_max_z": max_z_char,
    }))
}

fn riccati_check(
    k: &knob::RiccatiCheck,
    ctx: &Context,
    out: &mut RunDir,
) -> Result<serde_json::Value, CliError> {
    let p = ctx.params;
    let im = k.u0_im.clone().unwrap_or_else(|| vec![0.0; k.u0.len()]);
    if im.len() != k.u0.len() {
        return Err(invalid("u0_im must have the length of u0"));
    }
    if k.n_times < 2 || !(k.t_max > 0.0) {
        return Err(invalid("need n_times ≥ 2 and t_max > 0"));
    }
    let u0: Vec<Complex64> =
        k.u0.iter()
            .zip(&im)
            .map(|(r, i)| Complex64::new(*r, *i))
            .collect();
    let times: Vec<f64> = (0..k.n_times)
        .map(|i| k.t_max * i as f64 / (k.n_times - 1) as f64)
        .collect();
    let opts = RiccatiOptions::with_tol(k.rtol, k.atol);
    let traj = solve_riccati(p, &u0, k.t_max, Some(&times), &opts)?;
    write_trajectory_csv(std::fs::File::create(out.path("trajectory.csv"))?, &traj)?;

    let closed_form_applies = p.m() == 1
        && p.b[0] == 0.0
        && p.sigma[0] == 1.0
        && p.compiled_levy().is_zero()
        && im[0] == 0.0
        && k.u0[0] < 0.0
        && p.beta[(0, 0)] != 0.0;
    let mut max_rel_err = None;
    if closed_form_applies {
        let kappa = p.beta[(0, 0)];
        let rho = -k.u0[0];
        let mut records = Vec::new();
        let mut worst = 0.0f64;
        for s in &traj {
            let exact = closed_form_psi_1d(p.alpha[0], kappa, rho, s.t)?;
            let got = s.psi[0].re;
            let rel = ((got - exact) / exact).abs();
            worst = worst.max(rel);
            records.push(vec![num(s.t), num(got), num(exact), num(rel)]);
        }
        out.table(
            "closed_form.csv",
            &["t", "psi_ode", "psi_closed", "rel_err"].map(String::from),
            records,
        )?;
        out.note(format!(
            "max relative error against the closed form: {worst:e}"
        ));
        max_rel_err = Some(worst);
    }
    let last = traj.last().expect("at least two times");
    out.note(format!("ψ({}) = {:?}, φ = {}", last.t, last.psi, last.phi));
    Ok(json!({
        "t_max": k.t_max,
        "points": traj.len(),
        "phi_final": [last.phi.re, last.phi.im],
        "psi_final": last.psi.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
        "closed_form_max_rel_err": max_rel_err,
    }))
}

fn y_axis(y_min: f64, y_max: f64, count: usize) -> Result<Axis, CliError> {
    if !(y_max > y_min) || count < 3 {
        return Err(invalid("need y_max > y_min and y_count ≥ 3"));
    }
    Ok(Axis::linspace(y_min, y_max, count))
}

fn inversion(trunc_tol: f64, exec: Exec) -> InversionOptions {
    InversionOptions {
        trunc_tol,
        exec,
        ..InversionOptions::default()
    }
}

fn density1d(
    k: &knob::Density1d,
    ctx: &Context,
    out: &mut RunDir,
) -> Result<serde_json::Value, CliError> {
    let axis = y_axis(k.y_min, k.y_max, k.y_count)?;
    let opts = inversion(k.trunc_tol, ctx.exec);
    let grid = heat_kernel_derivative_1d(ctx.params, k.x, k.t, &axis, k.n, k.k, &opts)?;
    grid.save(&out.dir, "density")?;
    out.path("density.csv");
    out.path("density.json");
    let mass = grid.integral();
    let sup = grid.sup_norm();
    out.note(format!(
        "∂_x^{} ∂_y^{} p_{}({}, ·) on [{}, {}]: integral {mass:.8}, sup {sup:e}",
        k.n, k.k, k.t, k.x, k.y_min, k.y_max
    ));
    Ok(json!({
        "integral": mass,
        "l1_norm": grid.l1_norm(),
        "sup_norm": sup,
        "first_moment": if k.n + k.k == 0 { Some(grid.first_moment()) } else { None },
        "diagnostics": grid.diagnostics,
    }))
}

fn invariant1d(
    k: &knob::Invariant1d,
    ctx: &Context,
    out: &mut RunDir,
) -> Result<serde_json::Value, CliError> {
    let axis = y_axis(k.y_min, k.y_max, k.y_count)?;
    let grid = invariant_density_1d(ctx.params, &axis, &inversion(k.trunc_tol, ctx.exec))?;
    grid.save(&out.dir, "invariant")?;
    out.path("invariant.csv");
    out.path("invariant.json");
    let mass = grid.integral();
    let negative_side = grid
        .values
        .iter()
        .zip(axis.points())
        .filter(|(_, y)| *y < 0.0)
        .map(|(v, _)| v.abs())
        .fold(0.0, f64::max);
    out.note(format!(
        "invariant density: integral {mass:.8}, max |g| on y < 0 = {negative_side:e}"
    ));
    Ok(json!({
        "integral": mass,
        "first_moment": grid.first_moment(),
        "max_abs_below_zero": negative_side,
        "diagnostics": grid.diagnostics,
    }))
}

fn condition_a(
    k: &knob::ConditionA,
    ctx: &Context,
    out: &mut RunDir,
) -> Result<serde_json::Value, CliError> {
    let grid = k.xi_grid.clone().unwrap_or_else(default_condition_grid);
    let r = check_condition_a(ctx.params, &grid, k.k)?;
    out.rows("condition_a.csv", &r.coordinates)?;
    for c in &r.coordinates {
        out.note(format!(
            "k = {}: ϑ = {:.4}, C = {:.4e}, M = {:.4e}, satisfied = {}",
            c.k, c.vartheta_fit, c.c_fit, c.m_used, c.satisfied
        ));
    }
    out.note(format!("immigration condition satisfied: {}", r.overall));
    Ok(json!({ "satisfied": r.overall, "coordinates": r.coordinates }))
}

fn rates(k: &knob::Rates, ctx: &Context, out: &mut RunDir) -> Result<serde_json::Value, CliError> {
    let r = weak_error_rate_experiment(
        &RateSpec {
            params: ctx.params,
            x0: &k.x0,
            t: k.t,
            eps: &k.eps,
            eta: k.eta,
            n_paths: k.n_paths,
            master_seed: ctx.seed,
            substeps: k.substeps,
        },
        ctx.exec,
    )?;
    let mut records = Vec::new();
    for c in &r.coordinates {
        for (i, eps) in r.eps.iter().enumerate() {
            records.push(vec![
                c.k.to_string(),
                num(*eps),
                num(eps.ln()),
                num(c.moments[i]),
                num(c.std_err[i]),
                num(c.moments[i].ln()),
            ]);
        }
        out.note(format!(
            "coordinate {}: fitted exponent {:.4}, target ηκ = {:.4}",
            c.k, c.fitted_exponent, c.target
        ));
    }
    out.table(
        "rates.csv",
        &[
            "coordinate",
            "eps",
            "log_eps",
            "moment",
            "std_err",
            "log_moment",
        ]
        .map(String::from),
        records,
    )?;
    Ok(serde_json::to_value(&r)?)
}

fn boundary(
    k: &knob::Boundary,
    ctx: &Context,
    out: &mut RunDir,
) -> Result<serde_json::Value, CliError> {
    if k.n_paths == 0 {
        return Err(invalid("n_paths must be positive"));
    }
    let spec = EnsembleSpec {
        params: ctx.params,
        x0: &k.x0,
        t_final: k.t,
        dt: k.dt.unwrap_or_else(|| default_dt(k.t)),
        n_paths: k.n_paths,
        master_seed: ctx.seed,
    };
    let r = boundary_hit_probability(&spec, &k.eps, ctx.exec)?;
    out.rows("boundary.csv", &r.rows)?;
    out.note(format!(
        "log-log slope {:?}, immigration condition {:?}",
        r.slope, r.condition_a
    ));
    Ok(serde_json::to_value(&r)?)
}

fn lyapunov(
    k: &knob::Lyapunov,
    ctx: &Context,
    out: &mut RunDir,
) -> Result<serde_json::Value, CliError> {
    let p = ctx.params;
    let l = solve_lyapunov(&p.beta)?;
    let grid = drift_grid(p.m(), k.r_max);
    let cert = drift_certificate(p, &l, &grid, k.quad_tol, ctx.exec)?;
    let m = p.m();
    let mut header: Vec<String> = (0..m).map(|j| format!("x{j}")).collect();
    header.extend(["v", "generator", "bound"].map(String::from));
    out.table(
        "drift.csv",
        &header,
        cert.points.iter().map(|pt| {
            let mut r: Vec<String> = pt.x.iter().map(|v| num(*v)).collect();
            r.extend([pt.v, pt.generator, -cert.c1 * pt.v + cert.c2].map(num));
            r
        }),
    )?;
    out.note(format!(
        "residual {:e}, c_* = {:.6}, c^* = {:.6}; L0 V ≤ −{:.6} V + {:.6} on {} points",
        l.residual,
        l.c_star,
        l.c_superstar,
        cert.c1,
        cert.c2,
        cert.points.len()
    ));
    Ok(json!({
        "lyapunov": l,
        "c1": cert.c1,
        "c2": cert.c2,
        "points": cert.points.len(),
    }))
}

fn ergodicity(
    k: &knob::Ergodicity,
    ctx: &Context,
    out: &mut RunDir,
) -> Result<serde_json::Value, CliError> {
    let r = ergodicity_experiment(
        &ErgodicitySpec {
            params: ctx.params,
            x: &k.x,
            y: &k.y,
            t_grid: &k.t_grid,
            n_paths: k.n_paths,
            master_seed: ctx.seed,
            dt: k.dt,
            bins_per_axis: k.bins_per_axis,
            bootstrap: k.bootstrap,
        },
        ctx.exec,
    )?;
    out.rows("decay.csv", &r.rows)?;
    out.note(format!(
        "δ̂ = {:.4} (95% CI [{:.4}, {:.4}]), floor {:.4}, {} monotonicity violations",
        r.delta_hat, r.delta_ci.0, r.delta_ci.1, r.floor, r.monotonicity_violations
    ));
    Ok(serde_json::to_value(&r)?)
}

fn besov(k: &knob::Besov, ctx: &Context, out: &mut RunDir) -> Result<serde_json::Value, CliError> {
    let p = ctx.params;
    if !(k.y_step > 0.0 && k.y_max > k.y_min) {
        return Err(invalid("need y_step > 0 and y_max > y_min"));
    }
    let count = ((k.y_max - k.y_min) / k.y_step).round() as usize + 1;
    let axes = vec![Axis::new(k.y_min, k.y_step, count); p.m()];
    let a_min = anisotropy(&p.alpha)?
        .a
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let lambdas: Vec<f64> = k.lambda_factors.iter().map(|f| f * a_min).collect();
    let r = besov_shape_experiment(
        &BesovShapeSpec {
            params: p,
            x_bar: &k.x_bar,
            x_scalings: &k.x_scalings,
            t_fixed: k.t_fixed,
            times: &k.times,
            delta: k.delta,
            lambdas: &lambdas,
            n_paths: k.n_paths,
            dt: k.dt,
            axes: &axes,
            h_min: k.h_min.unwrap_or(k.y_step),
            master_seed: ctx.seed,
        },
        ctx.exec,
    )?;
    out.rows("besov.csv", &r.rows)?;
    for ((l, slope), (_, band)) in r.x_slopes.iter().zip(&r.t_band) {
        out.note(format!(
            "λ = {l:.4}: x-slope {slope:.4}, rescaled t-band ratio {band:.4}"
        ));
    }
    Ok(serde_json::to_value(&r)?)
}

fn dobrushin(
    k: &knob::Dobrushin,
    ctx: &Context,
    out: &mut RunDir,
) -> Result<serde_json::Value, CliError> {
    let r = dobrushin_check(
        &DobrushinSpec {
            params: ctx.params,
            level: k.level,
            horizon: k.horizon,
            n_pairs: k.n_pairs,
            n_paths: k.n_paths,
            master_seed: ctx.seed,
            dt: k.dt,
            bins_per_axis: k.bins_per_axis,
        },
        ctx.exec,
    )?;
    let m = ctx.params.m();
    let mut header: Vec<String> = (0..m).map(|j| format!("x{j}")).collect();
    header.extend((0..m).map(|j| format!("y{j}")));
    header.push("tv".into());
    out.table(
        "pairs.csv",
        &header,
        r.pairs.iter().map(|pr| {
            let mut row: Vec<String> = pr.x.iter().chain(&pr.y).map(|v| num(*v)).collect();
            row.push(num(pr.tv));
            row
        }),
    )?;
    out.note(format!("max TV {:.4}, margin {:.4}", r.max_tv, r.margin));
    Ok(serde_json::to_value(&r)?)
}
