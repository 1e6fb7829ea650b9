//! Lévy measures of the immigration subordinator.
//!
//! Every spec is compiled into a list of *rays*: a direction on the unit
//! sphere together with a radial measure restricted to a window `(lo, hi]`
//! of jump sizes `|z|`. All functionals (exponents, moments, jump rates)
//! reduce to one-dimensional radial integrals along each ray.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, gamma_li};

use crate::error::{Error, Result};
use crate::numerics::quad::{integrate, integrate_to_infinity, QuadOptions, QuadValue};
use crate::numerics::special::{exp_m1, power_integral, stable_exponent_window};

/// Bounded nonnegative function on `[0, ∞)` supplied by the caller.
#[derive(Clone)]
pub struct FnHandle(pub Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl fmt::Debug for FnHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnHandle(..)")
    }
}

pub type JumpSampleFn = dyn Fn(&mut dyn RngCore) -> Vec<f64> + Send + Sync;

/// Caller-supplied jump sampler for compound-Poisson measures.
#[derive(Clone)]
pub struct SamplerHandle(pub Arc<JumpSampleFn>);

impl fmt::Debug for SamplerHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SamplerHandle(..)")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemperingFn {
    /// `scale · e^{−rate·r}`
    Exponential { scale: f64, rate: f64 },
    /// `below` on `[0, cutoff)`, `above` on `[cutoff, ∞)`
    Step { below: f64, above: f64, cutoff: f64 },
    #[serde(skip)]
    Custom { f: FnHandle, bound: f64 },
}

impl TemperingFn {
    pub fn custom<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F, bound: f64) -> Self {
        TemperingFn::Custom {
            f: FnHandle(Arc::new(f)),
            bound,
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        match self {
            TemperingFn::Exponential { scale, rate } => scale * (-rate * r).exp(),
            TemperingFn::Step {
                below,
                above,
                cutoff,
            } => {
                if r < *cutoff {
                    *below
                } else {
                    *above
                }
            }
            TemperingFn::Custom { f, .. } => (f.0)(r),
        }
    }

    /// Declared supremum of the function.
    pub fn bound(&self) -> f64 {
        match self {
            TemperingFn::Exponential { scale, .. } => *scale,
            TemperingFn::Step { below, above, .. } => below.max(*above),
            TemperingFn::Custom { bound, .. } => *bound,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Atom {
    pub direction: Vec<f64>,
    pub mass: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JumpAtom {
    pub jump: Vec<f64>,
    pub prob: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpDistribution {
    Point {
        jump: Vec<f64>,
    },
    Discrete {
        atoms: Vec<JumpAtom>,
    },
    /// Jumps along a fixed direction with exponentially distributed length.
    ExponentialRay {
        direction: Vec<f64>,
        mean: f64,
    },
    /// Sampler-only descriptor. Moment metadata is whatever the caller declares.
    #[serde(skip)]
    Opaque {
        sampler: SamplerHandle,
        log_moment: Option<bool>,
        mean: Option<Vec<f64>>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum LevyMeasureSpec {
    Zero,
    /// `Σ_k w_k z_k^{−1−θ_k} dz_k` on the coordinate axes.
    CoordinateStable {
        theta: Vec<f64>,
        weight: Vec<f64>,
    },
    /// `∫ λ(dσ) r^{−1−θ} dr` with a finite angular atom list `λ`.
    Spherical {
        theta: f64,
        atoms: Vec<Atom>,
    },
    /// `Σ_k g_k(z_k) z_k^{−1−θ_k} dz_k` on the coordinate axes.
    TemperedCoordinate {
        theta: Vec<f64>,
        g: Vec<TemperingFn>,
    },
    /// Restriction of `inner` to `|z| ≤ radius`.
    Truncated {
        inner: Box<LevyMeasureSpec>,
        radius: f64,
    },
    CompoundPoisson {
        rate: f64,
        jump: JumpDistribution,
    },
}

fn unit_violation(name: &str, d: &[f64], m: usize, out: &mut Vec<String>) {
    if d.len() != m {
        out.push(format!("{name} has length {} (expected {m})", d.len()));
        return;
    }
    if d.iter().any(|x| !x.is_finite() || *x < 0.0) {
        out.push(format!("{name} leaves the nonnegative orthant"));
    }
    let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (n - 1.0).abs() > 1e-9 {
        out.push(format!("{name} is not a unit vector (|d| = {n})"));
    }
}

impl LevyMeasureSpec {
    /// Uniform surface measure on `S_+^{m−1}` discretized into at least
    /// `n_atoms` equal-area atoms; yields `ν(dz) ≈ dz/|z|^{m+θ}` on the orthant.
    pub fn spherical_uniform(m: usize, theta: f64, n_atoms: usize) -> Result<Self> {
        let atoms = match m {
            1 => vec![Atom {
                direction: vec![1.0],
                mass: 1.0,
            }],
            2 => {
                let n = n_atoms.max(1);
                let w = std::f64::consts::FRAC_PI_2 / n as f64;
                (0..n)
                    .map(|i| {
                        let a = (i as f64 + 0.5) * w;
                        Atom {
                            direction: vec![a.cos(), a.sin()],
                            mass: w,
                        }
                    })
                    .collect()
            }
            3 => {
                let nc = (n_atoms as f64).sqrt().ceil().max(1.0) as usize;
                let na = n_atoms.div_ceil(nc).max(1);
                let mass = std::f64::consts::FRAC_PI_2 / (nc * na) as f64;
                let mut atoms = Vec::with_capacity(nc * na);
                for i in 0..nc {
                    let c = (i as f64 + 0.5) / nc as f64;
                    let s = (1.0 - c * c).sqrt();
                    for j in 0..na {
                        let phi = (j as f64 + 0.5) / na as f64 * std::f64::consts::FRAC_PI_2;
                        atoms.push(Atom {
                            direction: vec![s * phi.cos(), s * phi.sin(), c],
                            mass,
                        });
                    }
                }
                atoms
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "uniform spherical discretization is implemented for m ≤ 3, got m = {m}"
                )))
            }
        };
        Ok(LevyMeasureSpec::Spherical { theta, atoms })
    }

    pub fn truncated(self, radius: f64) -> Self {
        LevyMeasureSpec::Truncated {
            inner: Box::new(self),
            radius,
        }
    }

    /// Messages for every violated admissibility constraint in dimension `m`.
    pub fn violations(&self, m: usize) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_violations(m, "levy", &mut out);
        out
    }

    fn collect_violations(&self, m: usize, path: &str, out: &mut Vec<String>) {
        let theta_ok = |t: f64| t > 0.0 && t < 1.0;
        match self {
            LevyMeasureSpec::Zero => {}
            LevyMeasureSpec::CoordinateStable { theta, weight } => {
                if theta.len() != m || weight.len() != m {
                    out.push(format!("{path}: theta/weight must have length {m}"));
                    return;
                }
                for k in 0..m {
                    if !theta_ok(theta[k]) {
                        out.push(format!("{path}.theta[{k}] not in (0,1)"));
                    }
                    if !(weight[k] >= 0.0 && weight[k].is_finite()) {
                        out.push(format!("{path}.weight[{k}] < 0"));
                    }
                }
            }
            LevyMeasureSpec::Spherical { theta, atoms } => {
                if !theta_ok(*theta) {
                    out.push(format!("{path}.theta not in (0,1)"));
                }
                for (i, a) in atoms.iter().enumerate() {
                    unit_violation(
                        &format!("{path}.atoms[{i}].direction"),
                        &a.direction,
                        m,
                        out,
                    );
                    if !(a.mass >= 0.0 && a.mass.is_finite()) {
                        out.push(format!("{path}.atoms[{i}].mass < 0"));
                    }
                }
            }
            LevyMeasureSpec::TemperedCoordinate { theta, g } => {
                if theta.len() != m || g.len() != m {
                    out.push(format!("{path}: theta/g must have length {m}"));
                    return;
                }
                for k in 0..m {
                    if !theta_ok(theta[k]) {
                        out.push(format!("{path}.theta[{k}] not in (0,1)"));
                    }
                    let b = g[k].bound();
                    if !(b.is_finite() && b >= 0.0) {
                        out.push(format!("{path}.g[{k}] has no finite nonnegative bound"));
                    }
                    match &g[k] {
                        TemperingFn::Exponential { scale, rate } => {
                            if *scale < 0.0 || !(*rate >= 0.0 && rate.is_finite()) {
                                out.push(format!("{path}.g[{k}] has negative scale or rate"));
                            }
                        }
                        TemperingFn::Step {
                            below,
                            above,
                            cutoff,
                        } => {
                            if *below < 0.0 || *above < 0.0 || !(*cutoff >= 0.0) {
                                out.push(format!("{path}.g[{k}] has a negative level or cutoff"));
                            }
                        }
                        TemperingFn::Custom { .. } => {}
                    }
                }
            }
            LevyMeasureSpec::Truncated { inner, radius } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    out.push(format!("{path}.radius must be positive and finite"));
                }
                inner.collect_violations(m, &format!("{path}.inner"), out);
            }
            LevyMeasureSpec::CompoundPoisson { rate, jump } => {
                if !(*rate > 0.0 && rate.is_finite()) {
                    out.push(format!("{path}.rate must be positive and finite"));
                }
                let nonneg = |name: String, v: &[f64], out: &mut Vec<String>| {
                    if v.len() != m {
                        out.push(format!("{name} has length {} (expected {m})", v.len()));
                    } else if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                        out.push(format!("{name} leaves the nonnegative orthant"));
                    }
                };
                match jump {
                    JumpDistribution::Point { jump } => {
                        nonneg(format!("{path}.jump.jump"), jump, out)
                    }
                    JumpDistribution::Discrete { atoms } => {
                        let mut total = 0.0;
                        for (i, a) in atoms.iter().enumerate() {
                            nonneg(format!("{path}.jump.atoms[{i}].jump"), &a.jump, out);
                            if !(a.prob >= 0.0) {
                                out.push(format!("{path}.jump.atoms[{i}].prob < 0"));
                            }
                            total += a.prob;
                        }
                        if (total - 1.0).abs() > 1e-9 {
                            out.push(format!("{path}.jump probabilities sum to {total}"));
                        }
                    }
                    JumpDistribution::ExponentialRay { direction, mean } => {
                        unit_violation(&format!("{path}.jump.direction"), direction, m, out);
                        if !(*mean > 0.0 && mean.is_finite()) {
                            out.push(format!("{path}.jump.mean must be positive"));
                        }
                    }
                    JumpDistribution::Opaque { mean, .. } => {
                        if let Some(v) = mean {
                            nonneg(format!("{path}.jump.mean"), v, out);
                        }
                    }
                }
            }
        }
    }

    /// Whether `∫ log(1 + |z|) ν(dz) < ∞`.
    pub fn log_moment_holds(&self) -> Result<bool> {
        match self {
            LevyMeasureSpec::Zero
            | LevyMeasureSpec::CoordinateStable { .. }
            | LevyMeasureSpec::Spherical { .. }
            | LevyMeasureSpec::TemperedCoordinate { .. }
            | LevyMeasureSpec::Truncated { .. } => Ok(true),
            LevyMeasureSpec::CompoundPoisson { jump, .. } => match jump {
                JumpDistribution::Opaque { log_moment, .. } => log_moment.ok_or_else(|| {
                    Error::UnknownMoment(
                        "opaque jump distribution does not declare a log-moment flag".into(),
                    )
                }),
                _ => Ok(true),
            },
        }
    }

    pub fn compile(&self, m: usize) -> CompiledLevy {
        let mut c = CompiledLevy {
            m,
            rays: Vec::new(),
            opaque: Vec::new(),
            exact: ExactSampling::Approximate,
        };
        self.compile_into(m, &mut c, 0.0, f64::INFINITY);
        c.exact = match self {
            LevyMeasureSpec::Zero => ExactSampling::Zero,
            LevyMeasureSpec::CoordinateStable { theta, weight } => {
                ExactSampling::CoordinateStable {
                    theta: theta.clone(),
                    weight: weight.clone(),
                }
            }
            _ if c.rays.iter().all(|r| r.radial.finite_activity()) => ExactSampling::FiniteActivity,
            _ => ExactSampling::Approximate,
        };
        c
    }

    fn compile_into(&self, m: usize, c: &mut CompiledLevy, lo: f64, hi: f64) {
        let axis = |k: usize| {
            let mut d = vec![0.0; m];
            d[k] = 1.0;
            d
        };
        let push = |dir: Vec<f64>, radial: Radial, c: &mut CompiledLevy| {
            if radial.is_null() {
                return;
            }
            c.rays.push(Ray {
                dir,
                radial,
                lo,
                hi,
            });
        };
        match self {
            LevyMeasureSpec::Zero => {}
            LevyMeasureSpec::CoordinateStable { theta, weight } => {
                for k in 0..m {
                    push(
                        axis(k),
                        Radial::Stable {
                            theta: theta[k],
                            weight: weight[k],
                        },
                        c,
                    );
                }
            }
            LevyMeasureSpec::Spherical { theta, atoms } => {
                for a in atoms {
                    push(
                        a.direction.clone(),
                        Radial::Stable {
                            theta: *theta,
                            weight: a.mass,
                        },
                        c,
                    );
                }
            }
            LevyMeasureSpec::TemperedCoordinate { theta, g } => {
                for k in 0..m {
                    match &g[k] {
                        TemperingFn::Exponential { scale, rate } => push(
                            axis(k),
                            Radial::ExpTempered {
                                theta: theta[k],
                                scale: *scale,
                                rate: *rate,
                            },
                            c,
                        ),
                        TemperingFn::Step {
                            below,
                            above,
                            cutoff,
                        } => {
                            // piecewise-constant tempering splits into two plain stable windows
                            let cut = cutoff.clamp(lo, hi);
                            if cut > lo {
                                c.rays.push(Ray {
                                    dir: axis(k),
                                    radial: Radial::Stable {
                                        theta: theta[k],
                                        weight: *below,
                                    },
                                    lo,
                                    hi: cut,
                                });
                            }
                            if cut < hi {
                                c.rays.push(Ray {
                                    dir: axis(k),
                                    radial: Radial::Stable {
                                        theta: theta[k],
                                        weight: *above,
                                    },
                                    lo: cut,
                                    hi,
                                });
                            }
                            c.rays.retain(|r| !r.radial.is_null());
                        }
                        TemperingFn::Custom { f, bound } => push(
                            axis(k),
                            Radial::Custom {
                                theta: theta[k],
                                g: f.clone(),
                                bound: *bound,
                            },
                            c,
                        ),
                    }
                }
            }
            LevyMeasureSpec::Truncated { inner, radius } => {
                inner.compile_into(m, c, lo, hi.min(*radius));
            }
            LevyMeasureSpec::CompoundPoisson { rate, jump } => match jump {
                JumpDistribution::Point { jump } => {
                    push_point(c, jump, *rate, lo, hi);
                }
                JumpDistribution::Discrete { atoms } => {
                    for a in atoms {
                        push_point(c, &a.jump, rate * a.prob, lo, hi);
                    }
                }
                JumpDistribution::ExponentialRay { direction, mean } => push(
                    direction.clone(),
                    Radial::ExpJumps {
                        rate: *rate,
                        mean: *mean,
                    },
                    c,
                ),
                JumpDistribution::Opaque {
                    sampler,
                    log_moment,
                    mean,
                } => c.opaque.push(OpaqueJumps {
                    rate: *rate,
                    sampler: sampler.clone(),
                    lo,
                    hi,
                    log_moment: *log_moment,
                    mean: mean.clone(),
                }),
            },
        }
    }
}

fn push_point(c: &mut CompiledLevy, jump: &[f64], rate: f64, lo: f64, hi: f64) {
    let r = jump.iter().map(|x| x * x).sum::<f64>().sqrt();
    if r == 0.0 || rate == 0.0 {
        return;
    }
    c.rays.push(Ray {
        dir: jump.iter().map(|x| x / r).collect(),
        radial: Radial::Point { rate, r },
        lo,
        hi,
    });
}

/// Radial part of a ray, as a measure on jump lengths `r > 0`.
#[derive(Clone, Debug)]
pub enum Radial {
    /// `weight · r^{−1−θ} dr`
    Stable { theta: f64, weight: f64 },
    /// `scale · e^{−rate·r} r^{−1−θ} dr`
    ExpTempered { theta: f64, scale: f64, rate: f64 },
    /// `g(r) r^{−1−θ} dr` with `0 ≤ g ≤ bound`
    Custom { theta: f64, g: FnHandle, bound: f64 },
    /// `rate · Exp(mean)(dr)`
    ExpJumps { rate: f64, mean: f64 },
    /// `rate · δ_r`
    Point { rate: f64, r: f64 },
}

const RADIAL_QUAD: QuadOptions = QuadOptions {
    abs_tol: 1e-13,
    rel_tol: 1e-11,
    max_intervals: 4000,
};

/// `∫_lo^hi f(r) r^{−1−θ} dr` for `f(r) = O(r)` at the origin.
fn radial_quad<T: QuadValue, F: Fn(f64) -> T>(f: F, theta: f64, lo: f64, hi: f64) -> Result<T> {
    let mut total = T::zero();
    let mut err = 0.0;
    let mut ok = true;
    let cut = hi.min(1.0);
    if lo < cut {
        let p = 1.0 / (1.0 - theta);
        let r = integrate(
            |v: f64| {
                let x = v.powf(p);
                f(x) * (p * v.powf(p - 1.0) * x.powf(-1.0 - theta))
            },
            lo.powf(1.0 / p),
            cut.powf(1.0 / p),
            RADIAL_QUAD,
        );
        total = total + r.value;
        err += r.abs_err;
        ok &= r.converged;
    }
    let a = lo.max(1.0);
    if a < hi {
        let g = |r: f64| f(r) * r.powf(-1.0 - theta);
        let r = if hi.is_infinite() {
            integrate_to_infinity(g, a, RADIAL_QUAD)
        } else {
            integrate(g, a, hi, RADIAL_QUAD)
        };
        total = total + r.value;
        err += r.abs_err;
        ok &= r.converged;
    }
    if ok {
        Ok(total)
    } else {
        Err(Error::Quadrature(format!(
            "radial integral on ({lo}, {hi}] did not converge (error estimate {err:e})"
        )))
    }
}

impl Radial {
    fn is_null(&self) -> bool {
        match self {
            Radial::Stable { weight, .. } => *weight == 0.0,
            Radial::ExpTempered { scale, .. } => *scale == 0.0,
            Radial::Custom { bound, .. } => *bound == 0.0,
            Radial::ExpJumps { rate, .. } | Radial::Point { rate, .. } => *rate == 0.0,
        }
    }

    pub fn finite_activity(&self) -> bool {
        matches!(self, Radial::ExpJumps { .. } | Radial::Point { .. })
    }

    /// `∫_{(lo,hi]} (e^{s r} − 1) ρ(dr)` for `Re s ≤ 0`.
    pub fn exponent(&self, s: Complex64, lo: f64, hi: f64) -> Result<Complex64> {
        if hi <= lo {
            return Ok(Complex64::new(0.0, 0.0));
        }
        Ok(match self {
            Radial::Stable { theta, weight } => stable_exponent_window(s, *theta, lo, hi) * *weight,
            Radial::ExpTempered { theta, scale, rate } => {
                let l = Complex64::new(*rate, 0.0);
                (stable_exponent_window(s - l, *theta, lo, hi)
                    - stable_exponent_window(-l, *theta, lo, hi))
                    * *scale
            }
            Radial::Custom { theta, g, .. } => {
                radial_quad(|r| exp_m1(s * r) * (g.0)(r), *theta, lo, hi)?
            }
            Radial::ExpJumps { rate, mean } => {
                // rate · ∫_lo^hi (e^{sr} − 1) e^{−r/μ}/μ dr
                let k = s - 1.0 / mean;
                let upper = |r: f64| {
                    if r.is_infinite() {
                        Complex64::new(0.0, 0.0)
                    } else {
                        (k * r).exp()
                    }
                };
                let first = (upper(hi) - upper(lo)) / (k * *mean);
                let second = (-lo / mean).exp()
                    - if hi.is_infinite() {
                        0.0
                    } else {
                        (-hi / mean).exp()
                    };
                (first - second) * *rate
            }
            Radial::Point { rate, r } => {
                if *r > lo && *r <= hi {
                    exp_m1(s * *r) * *rate
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
        })
    }

    /// `∫_{(lo,hi]} f(r) ρ(dr)` for `f(r) = O(r)` at the origin.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, lo: f64, hi: f64) -> Result<f64> {
        if hi <= lo {
            return Ok(0.0);
        }
        Ok(match self {
            Radial::Stable { theta, weight } => weight * radial_quad(&f, *theta, lo, hi)?,
            Radial::ExpTempered { theta, scale, rate } => {
                scale * radial_quad(|r| f(r) * (-rate * r).exp(), *theta, lo, hi)?
            }
            Radial::Custom { theta, g, .. } => radial_quad(|r| f(r) * (g.0)(r), *theta, lo, hi)?,
            Radial::ExpJumps { rate, mean } => {
                let g = |r: f64| f(r) * (-r / mean).exp() / mean;
                let q = if hi.is_infinite() {
                    integrate_to_infinity(g, lo, RADIAL_QUAD)
                } else {
                    integrate(g, lo, hi, RADIAL_QUAD)
                };
                if !q.converged {
                    return Err(Error::Quadrature(format!(
                        "exponential-jump integral on ({lo}, {hi}] did not converge"
                    )));
                }
                rate * q.value
            }
            Radial::Point { rate, r } => {
                if *r > lo && *r <= hi {
                    rate * f(*r)
                } else {
                    0.0
                }
            }
        })
    }

    /// `∫_{(lo,hi]} r ρ(dr)`, possibly infinite.
    pub fn first_moment(&self, lo: f64, hi: f64) -> Result<f64> {
        if hi <= lo {
            return Ok(0.0);
        }
        Ok(match self {
            Radial::Stable { theta, weight } => weight * power_integral(-theta, lo, hi),
            Radial::ExpTempered { theta, scale, rate } => {
                if *rate == 0.0 {
                    scale * power_integral(-theta, lo, hi)
                } else {
                    // ∫ r^{−θ} e^{−λr} dr = λ^{θ−1} [γ(1−θ, λ·hi) − γ(1−θ, λ·lo)]
                    let a = 1.0 - theta;
                    let upper = if hi.is_infinite() {
                        gamma(a)
                    } else {
                        gamma_li(a, rate * hi)
                    };
                    let lower = if lo == 0.0 {
                        0.0
                    } else {
                        gamma_li(a, rate * lo)
                    };
                    scale * rate.powf(theta - 1.0) * (upper - lower)
                }
            }
            Radial::Custom { theta, g, .. } => {
                match radial_quad(|r| r * (g.0)(r), *theta, lo, hi) {
                    Ok(v) => v,
                    Err(_) if hi.is_infinite() => f64::INFINITY,
                    Err(e) => return Err(e),
                }
            }
            Radial::ExpJumps { rate, mean } => {
                let f = |r: f64| {
                    if r.is_infinite() {
                        0.0
                    } else {
                        (r + mean) * (-r / mean).exp()
                    }
                };
                rate * (f(lo) - f(hi))
            }
            Radial::Point { rate, r } => {
                if *r > lo && *r <= hi {
                    rate * r
                } else {
                    0.0
                }
            }
        })
    }

    /// Total mass on `(lo, hi]`; infinite for infinite-activity parts reaching the origin.
    pub fn mass(&self, lo: f64, hi: f64) -> Result<f64> {
        if hi <= lo {
            return Ok(0.0);
        }
        Ok(match self {
            Radial::Stable { theta, weight } => weight * power_integral(-1.0 - theta, lo, hi),
            Radial::ExpTempered { theta, scale, rate } => {
                if lo == 0.0 {
                    f64::INFINITY
                } else {
                    scale * radial_quad(|r| (-rate * r).exp(), *theta, lo, hi)?
                }
            }
            Radial::Custom { theta, g, .. } => {
                if lo == 0.0 {
                    f64::INFINITY
                } else {
                    radial_quad(|r| (g.0)(r), *theta, lo, hi)?
                }
            }
            Radial::ExpJumps { rate, mean } => {
                let tail = |r: f64| {
                    if r.is_infinite() {
                        0.0
                    } else {
                        (-r / mean).exp()
                    }
                };
                rate * (tail(lo) - tail(hi))
            }
            Radial::Point { rate, r } => {
                if *r > lo && *r <= hi {
                    *rate
                } else {
                    0.0
                }
            }
        })
    }

    /// Draws a jump length from the normalized restriction to `(lo, hi]`, `lo > 0`
    /// for infinite-activity parts.
    pub fn sample_length<R: Rng + ?Sized>(&self, lo: f64, hi: f64, rng: &mut R) -> f64 {
        let stable = |theta: f64, rng: &mut R| {
            let a = lo.powf(-theta);
            let b = if hi.is_infinite() {
                0.0
            } else {
                hi.powf(-theta)
            };
            let u: f64 = rng.random();
            (a - u * (a - b)).powf(-1.0 / theta)
        };
        match self {
            Radial::Stable { theta, .. } => stable(*theta, rng),
            Radial::ExpTempered { theta, rate, .. } => loop {
                let r = stable(*theta, rng);
                let u: f64 = rng.random();
                if u <= (-rate * (r - lo)).exp() {
                    return r;
                }
            },
            Radial::Custom { theta, g, bound } => loop {
                let r = stable(*theta, rng);
                let u: f64 = rng.random();
                if u * bound <= (g.0)(r) {
                    return r;
                }
            },
            Radial::ExpJumps { mean, .. } => {
                let span = if hi.is_infinite() {
                    1.0
                } else {
                    1.0 - (-(hi - lo) / mean).exp()
                };
                let u: f64 = rng.random();
                lo - mean * (1.0 - u * span).ln()
            }
            Radial::Point { r, .. } => *r,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Ray {
    pub dir: Vec<f64>,
    pub radial: Radial,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug)]
pub struct OpaqueJumps {
    pub rate: f64,
    pub sampler: SamplerHandle,
    /// Only jumps with `lo < |z| ≤ hi` are kept (thinning).
    pub lo: f64,
    pub hi: f64,
    pub log_moment: Option<bool>,
    pub mean: Option<Vec<f64>>,
}

impl OpaqueJumps {
    pub fn keeps(&self, z: &[f64]) -> bool {
        let r = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        r > self.lo && r <= self.hi
    }
}

/// How subordinator increments can be drawn.
#[derive(Clone, Debug)]
pub enum ExactSampling {
    Zero,
    CoordinateStable {
        theta: Vec<f64>,
        weight: Vec<f64>,
    },
    FiniteActivity,
    /// Compound Poisson above a cutoff plus mean compensation below it.
    Approximate,
}

/// Point estimate with Monte-Carlo standard error (zero for closed forms).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

const OPAQUE_MC_DRAWS: usize = 100_000;
const OPAQUE_MC_SEED: u64 = 0x6a63_6972;

#[derive(Clone, Debug)]
pub struct CompiledLevy {
    pub m: usize,
    pub rays: Vec<Ray>,
    pub opaque: Vec<OpaqueJumps>,
    pub exact: ExactSampling,
}

fn dot_c(u: &[Complex64], d: &[f64]) -> Complex64 {
    u.iter()
        .zip(d)
        .fold(Complex64::new(0.0, 0.0), |acc, (a, b)| acc + a * *b)
}

impl CompiledLevy {
    pub fn is_zero(&self) -> bool {
        self.rays.is_empty() && self.opaque.is_empty()
    }

    fn opaque_unsupported(&self) -> Result<()> {
        if self.opaque.is_empty() {
            Ok(())
        } else {
            Err(Error::Unsupported(
                "compound-Poisson measure with an opaque jump sampler has no evaluable transform"
                    .into(),
            ))
        }
    }

    /// `∫_{cut_lo < |z| ≤ cut_hi} (e^{⟨u,z⟩} − 1) ν(dz)`.
    pub fn exponent_window(&self, u: &[Complex64], cut_lo: f64, cut_hi: f64) -> Result<Complex64> {
        self.opaque_unsupported()?;
        let mut acc = Complex64::new(0.0, 0.0);
        for ray in &self.rays {
            let lo = ray.lo.max(cut_lo);
            let hi = ray.hi.min(cut_hi);
            if hi > lo {
                acc += ray.radial.exponent(dot_c(u, &ray.dir), lo, hi)?;
            }
        }
        Ok(acc)
    }

    /// `∫ (e^{⟨u,z⟩} − 1) ν(dz)`.
    pub fn exponent(&self, u: &[Complex64]) -> Result<Complex64> {
        self.exponent_window(u, 0.0, f64::INFINITY)
    }

    /// `∫_{cut_lo < |z| ≤ cut_hi} f(z) ν(dz)` for `f(z) = O(|z|)` at the origin.
    pub fn integrate_window<F: Fn(&[f64]) -> f64>(
        &self,
        f: F,
        cut_lo: f64,
        cut_hi: f64,
    ) -> Result<f64> {
        self.opaque_unsupported()?;
        let mut acc = 0.0;
        for ray in &self.rays {
            let lo = ray.lo.max(cut_lo);
            let hi = ray.hi.min(cut_hi);
            if hi > lo {
                acc += ray.radial.integrate(
                    |r| {
                        let z: Vec<f64> = ray.dir.iter().map(|d| r * d).collect();
                        f(&z)
                    },
                    lo,
                    hi,
                )?;
            }
        }
        Ok(acc)
    }

    /// `∫ z ν(dz)`; errors when some coordinate is infinite.
    pub fn first_moment(&self) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.m];
        for ray in &self.rays {
            let mu = ray.radial.first_moment(ray.lo, ray.hi)?;
            for (o, d) in out.iter_mut().zip(&ray.dir) {
                if *d > 0.0 {
                    *o += mu * d;
                }
            }
        }
        for op in &self.opaque {
            match (&op.mean, op.hi.is_infinite() && op.lo == 0.0) {
                (Some(mean), true) => {
                    for (o, v) in out.iter_mut().zip(mean) {
                        *o += op.rate * v;
                    }
                }
                _ => {
                    return Err(Error::UnknownMoment(
                        "opaque jump distribution does not declare a usable mean".into(),
                    ))
                }
            }
        }
        if let Some(k) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NoFirstMoment(format!(
                "∫ z_{k} ν(dz) is infinite; stable-type Lévy measures with θ < 1 have no first moment \
                 unless truncated (variant `truncated`), tempered, or replaced by a compound-Poisson measure"
            )));
        }
        Ok(out)
    }

    /// `∫_{|z| ≤ eps} z ν(dz)` over the infinite-activity rays.
    pub fn small_jump_mean(&self, eps: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.m];
        for ray in &self.rays {
            if ray.radial.finite_activity() {
                continue;
            }
            let mu = ray.radial.first_moment(ray.lo, ray.hi.min(eps))?;
            for (o, d) in out.iter_mut().zip(&ray.dir) {
                *o += mu * d;
            }
        }
        Ok(out)
    }

    /// `b_k ξ`-free part of the immigration functional: `∫ (1 − e^{−ξ z_k}) ν(dz)`.
    pub fn immigration(&self, k: usize, xi: f64) -> Result<Estimate> {
        let mut value = 0.0;
        for ray in &self.rays {
            let d = ray.dir[k];
            if d == 0.0 || xi == 0.0 {
                continue;
            }
            let e = ray
                .radial
                .exponent(Complex64::new(-xi * d, 0.0), ray.lo, ray.hi)?;
            value -= e.re;
        }
        let mut var = 0.0;
        if !self.opaque.is_empty() && xi > 0.0 {
            log::warn!("immigration functional of an opaque jump law estimated by Monte Carlo");
            let mut rng = ChaCha8Rng::seed_from_u64(OPAQUE_MC_SEED);
            for op in &self.opaque {
                let mut s = 0.0;
                let mut s2 = 0.0;
                for _ in 0..OPAQUE_MC_DRAWS {
                    let z = (op.sampler.0)(&mut rng);
                    let v = if op.keeps(&z) {
                        -(-xi * z[k]).exp_m1()
                    } else {
                        0.0
                    };
                    s += v;
                    s2 += v * v;
                }
                let n = OPAQUE_MC_DRAWS as f64;
                let mean = s / n;
                let sv = (s2 / n - mean * mean).max(0.0) / (n - 1.0);
                value += op.rate * mean;
                var += op.rate * op.rate * sv;
            }
        }
        Ok(Estimate {
            value: value.max(0.0),
            std_err: var.sqrt(),
        })
    }

    pub fn log_moment_holds(&self) -> Result<bool> {
        for op in &self.opaque {
            if op.hi.is_finite() {
                continue;
            }
            match op.log_moment {
                Some(false) => return Ok(false),
                Some(true) => {}
                None => {
                    return Err(Error::UnknownMoment(
                        "opaque jump distribution does not declare a log-moment flag".into(),
                    ))
                }
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::special::stable_laplace_constant;

    #[test]
    fn coordinate_stable_immigration_closed_form() {
        let spec = LevyMeasureSpec::CoordinateStable {
            theta: vec![0.5],
            weight: vec![1.0],
        };
        let c = spec.compile(1);
        let v = c.immigration(0, 4.0).unwrap().value;
        assert!((v - 4.0 * std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn spherical_axis_atom_does_not_feed_other_axes() {
        let spec = LevyMeasureSpec::Spherical {
            theta: 0.6,
            atoms: vec![Atom {
                direction: vec![1.0, 0.0, 0.0],
                mass: 1.0,
            }],
        };
        let c = spec.compile(3);
        for xi in [0.1, 1.0, 100.0] {
            assert_eq!(c.immigration(2, xi).unwrap().value, 0.0);
        }
        let want = stable_laplace_constant(0.6) * 2.0f64.powf(0.6);
        assert!((c.immigration(0, 2.0).unwrap().value - want).abs() < 1e-12);
    }

    #[test]
    fn spherical_uniform_masses() {
        for m in [2, 3] {
            let spec = LevyMeasureSpec::spherical_uniform(m, 0.5, 64).unwrap();
            assert!(spec.violations(m).is_empty());
            if let LevyMeasureSpec::Spherical { atoms, .. } = spec {
                assert!(atoms.len() >= 64);
                let total: f64 = atoms.iter().map(|a| a.mass).sum();
                assert!((total - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tempered_exponential_matches_custom_quadrature() {
        let closed = LevyMeasureSpec::TemperedCoordinate {
            theta: vec![0.7],
            g: vec![TemperingFn::Exponential {
                scale: 2.0,
                rate: 1.5,
            }],
        }
        .compile(1);
        let quad = LevyMeasureSpec::TemperedCoordinate {
            theta: vec![0.7],
            g: vec![TemperingFn::custom(|r| 2.0 * (-1.5 * r).exp(), 2.0)],
        }
        .compile(1);
        for u in [
            Complex64::new(-0.5, 0.0),
            Complex64::new(-1.0, 3.0),
            Complex64::new(0.0, -2.0),
        ] {
            let a = closed.exponent(&[u]).unwrap();
            let b = quad.exponent(&[u]).unwrap();
            assert!((a - b).norm() < 1e-8 * (1.0 + a.norm()), "{a} vs {b}");
        }
        let ma = closed.first_moment().unwrap()[0];
        let mb = quad.first_moment().unwrap()[0];
        assert!((ma - mb).abs() < 1e-8 * ma);
    }

    #[test]
    fn step_tempering_splits_windows() {
        let step = LevyMeasureSpec::TemperedCoordinate {
            theta: vec![0.4],
            g: vec![TemperingFn::Step {
                below: 1.0,
                above: 0.0,
                cutoff: 2.0,
            }],
        }
        .compile(1);
        let trunc = LevyMeasureSpec::CoordinateStable {
            theta: vec![0.4],
            weight: vec![1.0],
        }
        .truncated(2.0)
        .compile(1);
        let u = [Complex64::new(-0.3, 1.1)];
        assert!((step.exponent(&u).unwrap() - trunc.exponent(&u).unwrap()).norm() < 1e-14);
    }

    #[test]
    fn truncated_stable_first_moment() {
        let c = LevyMeasureSpec::CoordinateStable {
            theta: vec![0.6, 0.6],
            weight: vec![0.5, 0.5],
        }
        .truncated(5.0)
        .compile(2);
        let m = c.first_moment().unwrap();
        let want = 0.5 * 5.0f64.powf(0.4) / 0.4;
        assert!((m[0] - want).abs() < 1e-12 && (m[1] - want).abs() < 1e-12);
    }

    #[test]
    fn untruncated_stable_has_no_first_moment() {
        let c = LevyMeasureSpec::CoordinateStable {
            theta: vec![0.6],
            weight: vec![1.0],
        }
        .compile(1);
        assert!(matches!(c.first_moment(), Err(Error::NoFirstMoment(_))));
    }

    #[test]
    fn compound_poisson_exponential_ray() {
        let c = LevyMeasureSpec::CompoundPoisson {
            rate: 2.0,
            jump: JumpDistribution::ExponentialRay {
                direction: vec![1.0],
                mean: 0.5,
            },
        }
        .compile(1);
        // rate (E e^{uJ} − 1) = 2 (1/(1 − 0.5u) − 1)
        let u = Complex64::new(-1.0, 2.0);
        let want = (1.0 / (1.0 - u * 0.5) - 1.0) * 2.0;
        assert!((c.exponent(&[u]).unwrap() - want).norm() < 1e-14);
        assert!((c.first_moment().unwrap()[0] - 1.0).abs() < 1e-14);
        assert!(matches!(c.exact, ExactSampling::FiniteActivity));
    }

    #[test]
    fn opaque_without_metadata() {
        let spec = LevyMeasureSpec::CompoundPoisson {
            rate: 1.0,
            jump: JumpDistribution::Opaque {
                sampler: SamplerHandle(Arc::new(|_: &mut dyn RngCore| vec![1.0])),
                log_moment: None,
                mean: None,
            },
        };
        assert!(matches!(
            spec.log_moment_holds(),
            Err(Error::UnknownMoment(_))
        ));
        let c = spec.compile(1);
        assert!(matches!(
            c.exponent(&[Complex64::new(-1.0, 0.0)]),
            Err(Error::Unsupported(_))
        ));
        let est = c.immigration(0, 1.0).unwrap();
        assert!((est.value - (1.0 - (-1.0f64).exp())).abs() < 1e-9);
    }

    #[test]
    fn toml_round_trip() {
        let spec = LevyMeasureSpec::CoordinateStable {
            theta: vec![0.6, 0.6],
            weight: vec![0.5, 0.5],
        }
        .truncated(5.0);
        let s = toml::to_string(&spec).unwrap();
        let back: LevyMeasureSpec = toml::from_str(&s).unwrap();
        assert!(matches!(back, LevyMeasureSpec::Truncated { radius, .. } if radius == 5.0));
    }
}
