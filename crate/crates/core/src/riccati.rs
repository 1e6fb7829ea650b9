//! Generalized Riccati system for the affine transform
//! `E[e^{⟨u, X^x(t)⟩}] = exp(φ(t,u) + ⟨x, ψ(t,u)⟩)`:
//!
//! ```text
//! ∂_t φ = F(ψ),   F(u)   = ⟨b,u⟩ + ∫ (e^{⟨u,z⟩} − 1) ν(dz)
//! ∂_t ψ = R(ψ),   R_j(u) = Σ_k β_kj u_k + σ_j (−u_j)^{α_j}
//! ```

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{is_subcritical, spectral_abscissa, CompiledLevy, ModelParams};
use crate::numerics::ode::{self, Flow, OdeOptions};
use crate::numerics::special::neg_pow;

/// Real parts above this count as a branch violation in `F` and `R`.
pub const BRANCH_TOL: f64 = 1e-12;
/// `Re ψ` above this aborts a solve.
pub const INVARIANT_TOL: f64 = 1e-8;
/// `Re ψ` above this is logged.
pub const INVARIANT_WARN: f64 = 1e-10;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RiccatiState {
    pub t: f64,
    pub phi: Complex64,
    pub psi: Vec<Complex64>,
}

#[derive(Clone, Copy, Debug)]
pub struct RiccatiOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            max_steps: 1_000_000,
        }
    }
}

impl RiccatiOptions {
    pub fn with_tol(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    fn ode(&self) -> OdeOptions {
        OdeOptions {
            rtol: self.rtol,
            atol: self.atol,
            max_steps: self.max_steps,
            ..OdeOptions::default()
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CharFnValue {
    pub value: Complex64,
    pub trajectory: Option<Vec<RiccatiState>>,
    /// `|value − value at 100× looser tolerances|`, a conservative bound on the solver error.
    pub error_estimate: f64,
}

fn check_branch(u: &[Complex64]) -> Result<()> {
    match u.iter().position(|z| z.re > BRANCH_TOL) {
        Some(index) => Err(Error::Branch {
            index,
            re: u[index].re,
        }),
        None => Ok(()),
    }
}

fn dot(x: &[f64], u: &[Complex64]) -> Complex64 {
    x.iter().zip(u).fold(ZERO, |acc, (a, z)| acc + z * *a)
}

/// `F`, `R` and the Riccati flow for one model, with the Lévy measure compiled once.
#[derive(Clone, Debug)]
pub struct RiccatiSystem {
    b: Vec<f64>,
    beta: DMatrix<f64>,
    sigma: Vec<f64>,
    alpha: Vec<f64>,
    levy: CompiledLevy,
}

impl RiccatiSystem {
    pub fn new(params: &ModelParams) -> Result<Self> {
        params.validate().structural()?;
        Ok(Self {
            b: params.b.clone(),
            beta: params.beta.clone(),
            sigma: params.sigma.clone(),
            alpha: params.alpha.clone(),
            levy: params.compiled_levy(),
        })
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn beta(&self) -> &DMatrix<f64> {
        &self.beta
    }

    pub fn levy(&self) -> &CompiledLevy {
        &self.levy
    }

    /// `F(u)`; branch error when some `Re u_j > 1e−12`.
    pub fn f(&self, u: &[Complex64]) -> Result<Complex64> {
        check_branch(u)?;
        self.f_unchecked(u)
    }

    /// `∫_{lo < |z| ≤ hi} (e^{⟨u,z⟩} − 1) ν(dz)` without the drift term.
    pub fn jump_part(&self, u: &[Complex64], lo: f64, hi: f64) -> Result<Complex64> {
        check_branch(u)?;
        if self.levy.is_zero() {
            return Ok(ZERO);
        }
        self.levy.exponent_window(u, lo, hi)
    }

    fn f_unchecked(&self, u: &[Complex64]) -> Result<Complex64> {
        let lin = dot(&self.b, u);
        if self.levy.is_zero() {
            return Ok(lin);
        }
        Ok(lin + self.levy.exponent(u)?)
    }

    /// `R(u)`; branch error when some `Re u_j > 1e−12`.
    pub fn r(&self, u: &[Complex64]) -> Result<Vec<Complex64>> {
        check_branch(u)?;
        let mut out = vec![ZERO; self.m()];
        self.r_into(u, &mut out);
        Ok(out)
    }

    fn r_into(&self, u: &[Complex64], out: &mut [Complex64]) {
        let m = self.m();
        for j in 0..m {
            let mut acc = ZERO;
            for k in 0..m {
                acc += u[k] * self.beta[(k, j)];
            }
            if self.sigma[j] != 0.0 {
                acc += neg_pow(u[j], self.alpha[j]) * self.sigma[j];
            }
            out[j] = acc;
        }
    }

    /// Runge–Kutta stages may overshoot `Re ψ ≤ 0` by roundoff; evaluate on the closed half-plane.
    fn project(u: &[Complex64], buf: &mut Vec<Complex64>) {
        buf.clear();
        buf.extend(u.iter().map(|z| Complex64::new(z.re.min(0.0), z.im)));
    }

    fn invariant_check(t: f64, psi: &[Complex64]) -> Result<()> {
        for (index, z) in psi.iter().enumerate() {
            if z.re > INVARIANT_TOL {
                return Err(Error::InvariantViolation { t, index, re: z.re });
            }
            if z.re > INVARIANT_WARN {
                log::warn!("Re psi[{index}] = {:e} at t = {t:e}", z.re);
            }
        }
        Ok(())
    }

    fn with_u0_context(err: Error, u0: &[Complex64]) -> Error {
        match err {
            Error::StepFailure { t, h, context } => Error::StepFailure {
                t,
                h,
                context: format!("{context}; u0 = {u0:?}"),
            },
            e => e,
        }
    }

    /// `(φ, ψ)` at each of the nondecreasing `times`.
    pub fn solve(
        &self,
        u0: &[Complex64],
        times: &[f64],
        opts: &RiccatiOptions,
    ) -> Result<Vec<RiccatiState>> {
        self.solve_split(u0, times, opts, None)
            .map(|v| v.into_iter().map(|(s, _)| s).collect())
    }

    /// `(φ, ψ)` at a single time.
    pub fn solve_at(
        &self,
        u0: &[Complex64],
        t: f64,
        opts: &RiccatiOptions,
    ) -> Result<RiccatiState> {
        Ok(self.solve(u0, &[t], opts)?.pop().expect("one output time"))
    }

    /// Like [`solve`](Self::solve); when `cut` is given, φ is additionally
    /// split into `⟨b,ψ⟩ + ∫_{|z|≤cut}` and `∫_{|z|>cut}`, returned in that order
    /// as the second tuple entry.
    fn solve_split(
        &self,
        u0: &[Complex64],
        times: &[f64],
        opts: &RiccatiOptions,
        cut: Option<f64>,
    ) -> Result<Vec<(RiccatiState, Option<(Complex64, Complex64)>)>> {
        let m = self.m();
        if u0.len() != m {
            return Err(Error::InvalidArgument(format!(
                "u0 has length {} (expected {m})",
                u0.len()
            )));
        }
        check_branch(u0)?;
        if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|t| *t < 0.0) {
            return Err(Error::InvalidArgument(
                "output times must be nonnegative and nondecreasing".into(),
            ));
        }
        let off = if cut.is_some() { 2 } else { 1 };
        let mut y0 = vec![ZERO; m + off];
        y0[off..].copy_from_slice(u0);
        let mut buf = Vec::with_capacity(m);
        let rhs = |_t: f64, y: &[Complex64], dy: &mut [Complex64]| -> Result<()> {
            Self::project(&y[off..], &mut buf);
            match cut {
                None => dy[0] = self.f_unchecked(&buf)?,
                Some(c) => {
                    let (near, far) = if self.levy.is_zero() {
                        (ZERO, ZERO)
                    } else {
                        (
                            self.levy.exponent_window(&buf, 0.0, c)?,
                            self.levy.exponent_window(&buf, c, f64::INFINITY)?,
                        )
                    };
                    dy[0] = dot(&self.b, &buf) + near;
                    dy[1] = far;
                }
            }
            self.r_into(&buf, &mut dy[off..]);
            Ok(())
        };
        let observer = |t: f64, y: &[Complex64]| -> Result<Flow> {
            Self::invariant_check(t, &y[off..])?;
            Ok(Flow::Continue)
        };
        let sol = ode::solve(rhs, 0.0, &y0, times, &opts.ode(), observer)
            .map_err(|e| Self::with_u0_context(e, u0))?;
        Ok(sol
            .times
            .iter()
            .zip(sol.states)
            .map(|(&t, y)| {
                let psi = y[off..].to_vec();
                match cut {
                    None => (RiccatiState { t, phi: y[0], psi }, None),
                    Some(_) => (
                        RiccatiState {
                            t,
                            phi: y[0] + y[1],
                            psi,
                        },
                        Some((y[0], y[1])),
                    ),
                }
            })
            .collect())
    }

    /// `exp(φ(t,u) + ⟨x, ψ(t,u)⟩)` with an a-posteriori error estimate.
    pub fn char_function(
        &self,
        x: &[f64],
        t: f64,
        u: &[Complex64],
        opts: &RiccatiOptions,
        keep_trajectory: Option<&[f64]>,
    ) -> Result<CharFnValue> {
        check_state(x, self.m())?;
        let value_of = |o: &RiccatiOptions| -> Result<(Complex64, Vec<RiccatiState>)> {
            let mut times: Vec<f64> = keep_trajectory.map(|v| v.to_vec()).unwrap_or_default();
            times.retain(|s| *s < t);
            times.push(t);
            let traj = self.solve(u, &times, o)?;
            let last = traj.last().expect("t is an output time");
            Ok(((last.phi + dot(x, &last.psi)).exp(), traj))
        };
        let (value, traj) = value_of(opts)?;
        let loose = RiccatiOptions::with_tol(opts.rtol * 100.0, opts.atol * 100.0);
        let (coarse, _) = value_of(&loose)?;
        Ok(CharFnValue {
            value,
            trajectory: keep_trajectory.map(|_| traj),
            error_estimate: (value - coarse).norm(),
        })
    }

    /// Factors `(Q⁰, Q¹)` of the characteristic function from splitting ν at
    /// `|z| = 1`: `Q⁰` carries `b`, the small jumps and the initial state,
    /// `Q¹` the large jumps started from 0. Their product is the full value.
    pub fn split_char(
        &self,
        x: &[f64],
        t: f64,
        u: &[Complex64],
        opts: &RiccatiOptions,
    ) -> Result<(Complex64, Complex64)> {
        check_state(x, self.m())?;
        let (state, parts) = self
            .solve_split(u, &[t], opts, Some(1.0))?
            .pop()
            .expect("one output time");
        let (near, far) = parts.expect("split requested");
        Ok(((near + dot(x, &state.psi)).exp(), far.exp()))
    }

    /// `φ(∞, u) = ∫_0^∞ F(ψ(s,u)) ds` for a subcritical model.
    pub fn invariant_exponent(
        &self,
        u: &[Complex64],
        tol: f64,
        opts: &RiccatiOptions,
    ) -> Result<Complex64> {
        if !is_subcritical(&self.beta) {
            return Err(Error::NotSubcritical(spectral_abscissa(&self.beta)));
        }
        if !self.levy.log_moment_holds()? {
            return Err(Error::InvalidModel(
                "∫ log(1+|z|) 1_{|z|>1} ν(dz) is infinite; no invariant measure is guaranteed"
                    .into(),
            ));
        }
        let m = self.m();
        check_branch(u)?;
        if u.len() != m {
            return Err(Error::InvalidArgument(format!(
                "u has length {} (expected {m})",
                u.len()
            )));
        }
        if u.iter().all(|z| *z == ZERO) {
            return Ok(ZERO);
        }
        let rate = -spectral_abscissa(&self.beta);
        let s_max = 1000.0 / rate;
        let mut y0 = vec![ZERO; m + 1];
        y0[1..].copy_from_slice(u);
        let mut buf = Vec::with_capacity(m);
        let rhs = |_t: f64, y: &[Complex64], dy: &mut [Complex64]| -> Result<()> {
            Self::project(&y[1..], &mut buf);
            dy[0] = self.f_unchecked(&buf)?;
            self.r_into(&buf, &mut dy[1..]);
            Ok(())
        };
        let mut quiet = 0usize;
        let mut obuf = Vec::with_capacity(m);
        let observer = |t: f64, y: &[Complex64]| -> Result<Flow> {
            Self::invariant_check(t, &y[1..])?;
            Self::project(&y[1..], &mut obuf);
            let rate_now = self.f_unchecked(&obuf)?.norm();
            // ψ at the integrator's absolute noise floor counts as converged
            let floor = y[1..].iter().all(|z| z.norm() <= 10.0 * opts.atol);
            if rate_now < tol * y[0].norm().max(1.0) || floor {
                quiet += 1;
            } else {
                quiet = 0;
            }
            Ok(if quiet >= 5 {
                Flow::Stop
            } else {
                Flow::Continue
            })
        };
        let sol = ode::solve(rhs, 0.0, &y0, &[s_max], &opts.ode(), observer)
            .map_err(|e| Self::with_u0_context(e, u))?;
        if let Some((_, y)) = sol.stopped {
            return Ok(y[0]);
        }
        // large steps near the fixed point can reach s_max before five quiet steps
        let last = sol.states.last().expect("one output time");
        let mut fin = Vec::with_capacity(m);
        Self::project(&last[1..], &mut fin);
        match self.f_unchecked(&fin)?.norm() < tol * last[0].norm().max(1.0) {
            true => Ok(last[0]),
            false => Err(Error::NonConvergence(format!(
                "|F(psi)| did not fall below {tol:e} by s = {s_max:e}"
            ))),
        }
    }
}

fn check_state(x: &[f64], m: usize) -> Result<()> {
    if x.len() != m {
        return Err(Error::InvalidArgument(format!(
            "x has length {} (expected {m})",
            x.len()
        )));
    }
    if x.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidArgument(
            "initial state must be nonnegative".into(),
        ));
    }
    Ok(())
}

pub fn f_func(params: &ModelParams, u: &[Complex64]) -> Result<Complex64> {
    RiccatiSystem::new(params)?.f(u)
}

pub fn r_func(params: &ModelParams, u: &[Complex64]) -> Result<Vec<Complex64>> {
    RiccatiSystem::new(params)?.r(u)
}

/// Trajectory `(φ, ψ)` on `[0, t_max]`, reported at `times` (defaults to 101 equispaced points).
pub fn solve_riccati(
    params: &ModelParams,
    u0: &[Complex64],
    t_max: f64,
    times: Option<&[f64]>,
    opts: &RiccatiOptions,
) -> Result<Vec<RiccatiState>> {
    if !(t_max > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "T must be positive, got {t_max}"
        )));
    }
    let grid: Vec<f64> = match times {
        Some(ts) => ts.iter().copied().filter(|s| *s <= t_max).collect(),
        None => (0..=100).map(|i| t_max * i as f64 / 100.0).collect(),
    };
    RiccatiSystem::new(params)?.solve(u0, &grid, opts)
}

/// Solution of `∂_s F̄ = κF̄ + (−F̄)^α`, `F̄(0) = −ρ`:
/// `F̄(s) = −((ρ^{1−α} − κ^{−1}) e^{−κ(α−1)s} + κ^{−1})^{1/(1−α)}`.
pub fn closed_form_psi_1d(alpha: f64, kappa: f64, rho: f64, s: f64) -> Result<f64> {
    if kappa == 0.0 || !(rho > 0.0) || !(s >= 0.0) || !(alpha > 1.0 && alpha < 2.0) {
        return Err(Error::Domain(format!(
            "closed form needs κ ≠ 0, ρ > 0, s ≥ 0, α ∈ (1,2); got κ={kappa}, ρ={rho}, s={s}, α={alpha}"
        )));
    }
    if s == 0.0 {
        return Ok(-rho);
    }
    let inv = 1.0 / kappa;
    let bracket = (rho.powf(1.0 - alpha) - inv) * (-kappa * (alpha - 1.0) * s).exp() + inv;
    if !(bracket > 0.0) {
        return Err(Error::Domain(format!(
            "closed-form bracket {bracket:e} ≤ 0 at s = {s}"
        )));
    }
    Ok(-bracket.powf(1.0 / (1.0 - alpha)))
}

pub fn char_function(
    params: &ModelParams,
    x: &[f64],
    t: f64,
    u: &[Complex64],
    opts: &RiccatiOptions,
) -> Result<CharFnValue> {
    RiccatiSystem::new(params)?.char_function(x, t, u, opts, None)
}

pub fn split_char(
    params: &ModelParams,
    x: &[f64],
    t: f64,
    u: &[Complex64],
    opts: &RiccatiOptions,
) -> Result<(Complex64, Complex64)> {
    RiccatiSystem::new(params)?.split_char(x, t, u, opts)
}

/// `φ(∞, u)`; `exp` of it is the characteristic function of the invariant law.
pub fn invariant_char(params: &ModelParams, u: &[Complex64], tol: f64) -> Result<Complex64> {
    RiccatiSystem::new(params)?.invariant_exponent(u, tol, &RiccatiOptions::default())
}

/// CSV columns `t, phi_re, phi_im, psi0_re, psi0_im, …`.
pub fn write_trajectory_csv<W: Write>(out: W, traj: &[RiccatiState]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let m = traj.first().map_or(0, |s| s.psi.len());
    let mut header = vec!["t".to_string(), "phi_re".into(), "phi_im".into()];
    for j in 0..m {
        header.push(format!("psi{j}_re"));
        header.push(format!("psi{j}_im"));
    }
    w.write_record(&header)?;
    for s in traj {
        let mut row = vec![s.t.to_string(), s.phi.re.to_string(), s.phi.im.to_string()];
        for z in &s.psi {
            row.push(z.re.to_string());
            row.push(z.im.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
