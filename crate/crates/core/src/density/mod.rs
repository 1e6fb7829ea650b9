//! One-dimensional heat kernels and invariant densities by Fourier
//! inversion, plus grid-based smoothness norms and weighted density
//! estimation.
//!
//! The transition density is
//! `p_t(x,y) = (1/π) Re ∫_0^∞ e^{−iuy} e^{φ(t,iu) + xψ(t,iu)} du`.
//! The Riccati pair `(φ, ψ)` is solved on a geometric set of frequency
//! nodes and interpolated (local cubic) onto the uniform FFT grid. The
//! interpolant is checked against direct solves at interval midpoints and
//! the node set refined when the check fails. A single table serves every
//! initial state `x`.

mod norms;
mod shape;

pub use norms::*;
pub use shape::*;

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{check_condition_a, ModelParams};
use crate::numerics::fourier::{trapezoid_sum, Axis, FrequencyGrid};
use crate::riccati::{RiccatiOptions, RiccatiSystem};
use crate::simulator::default_condition_grid;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug)]
pub struct InversionOptions {
    /// Characteristic values below this modulus are dropped.
    pub trunc_tol: f64,
    /// Largest frequency explored before reporting a truncation failure.
    pub u_limit: f64,
    /// Ratio between consecutive frequency nodes.
    pub node_ratio: f64,
    /// First nonzero frequency node.
    pub node_min: f64,
    /// Accepted interpolation error of the characteristic function.
    pub interp_tol: f64,
    pub riccati: RiccatiOptions,
    pub exec: Exec,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            trunc_tol: 1e-12,
            u_limit: 1e5,
            node_ratio: 1.02,
            node_min: 1e-4,
            interp_tol: 1e-9,
            riccati: RiccatiOptions::default(),
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct InversionDiagnostics {
    pub u_max: f64,
    pub n_u: usize,
    pub n_fft: usize,
    pub du: f64,
    pub nodes: usize,
    /// Largest `|char_interpolated − char_direct|` over the validation points.
    pub interpolation_error: f64,
    pub total_mass: f64,
    pub clipped_mass: f64,
    /// Clipped mass exceeded `1e−4` of the total.
    pub suspect: bool,
}

/// Values on a product of uniform axes, row-major with the last axis fastest.
#[derive(Clone, Debug, Serialize)]
pub struct DensityGrid {
    pub axes: Vec<Axis>,
    pub values: Vec<f64>,
    /// `Some(δ)` when the values carry the boundary weight `ρ_δ`.
    pub weight: Option<f64>,
    pub diagnostics: Option<InversionDiagnostics>,
}

/// Trapezoid weights of a uniform axis.
pub fn trapezoid_weights(axis: &Axis) -> Vec<f64> {
    let mut w = vec![axis.step; axis.count];
    if axis.count > 1 {
        w[0] *= 0.5;
        w[axis.count - 1] *= 0.5;
    }
    w
}

impl DensityGrid {
    pub fn new(axes: Vec<Axis>, values: Vec<f64>) -> Self {
        debug_assert_eq!(
            axes.iter().map(|a| a.count).product::<usize>(),
            values.len()
        );
        Self {
            axes,
            values,
            weight: None,
            diagnostics: None,
        }
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    /// Multi-index of the flat position `i`.
    pub fn index(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims()];
        for d in (0..self.dims()).rev() {
            idx[d] = i % self.axes[d].count;
            i /= self.axes[d].count;
        }
        idx
    }

    /// Product-trapezoid quadrature weight of flat position `i`.
    fn cell_weights(&self) -> Vec<f64> {
        let per_axis: Vec<Vec<f64>> = self.axes.iter().map(trapezoid_weights).collect();
        (0..self.values.len())
            .map(|i| {
                self.index(i)
                    .iter()
                    .enumerate()
                    .map(|(d, &j)| per_axis[d][j])
                    .product()
            })
            .collect()
    }

    /// `∫ g(values)` by the product trapezoid rule.
    pub fn integrate_with<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        self.cell_weights()
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * g(*v))
            .sum()
    }

    pub fn integral(&self) -> f64 {
        self.integrate_with(|v| v)
    }

    pub fn l1_norm(&self) -> f64 {
        self.integrate_with(f64::abs)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// `∫ y p(y) dy` along a one-dimensional grid.
    pub fn first_moment(&self) -> f64 {
        let axis = &self.axes[0];
        trapezoid_weights(axis)
            .iter()
            .enumerate()
            .map(|(i, w)| w * axis.point(i) * self.values[i])
            .sum()
    }

    /// CSV with one column per axis (`y0`, `y1`, …) and a final `value` column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.dims()).map(|d| format!("y{d}")).collect();
        header.push("value".into());
        w.write_record(&header)?;
        for (i, v) in self.values.iter().enumerate() {
            let mut row: Vec<String> = self
                .index(i)
                .iter()
                .enumerate()
                .map(|(d, &j)| self.axes[d].point(j).to_string())
                .collect();
            row.push(v.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// JSON header: axes, weight and inversion diagnostics (no values).
    pub fn header_json(&self) -> serde_json::Value {
        serde_json::json!({
            "axes": self.axes,
            "weight": self.weight.map(|d| serde_json::json!({"rho_delta": d})),
            "diagnostics": self.diagnostics,
        })
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        self.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        std::fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&self.header_json())?,
        )?;
        Ok(())
    }
}

/// `(φ, ψ)` on frequency nodes `0 = u_0 < u_1 < …`, interpolated locally.
#[derive(Clone, Debug)]
pub struct ExponentTable {
    pub u: Vec<f64>,
    pub phi: Vec<Complex64>,
    pub psi: Vec<Complex64>,
    pub interpolation_error: f64,
}

fn lagrange4(xs: &[f64], ys: &[Complex64], x: f64) -> Complex64 {
    let mut acc = ZERO;
    for i in 0..xs.len() {
        let mut w = 1.0;
        for j in 0..xs.len() {
            if i != j {
                w *= (x - xs[j]) / (xs[i] - xs[j]);
            }
        }
        acc += ys[i] * w;
    }
    acc
}

impl ExponentTable {
    /// Nodes `0, node_min·r^j` evaluated until `|e^{φ + x_min ψ}|` stays below
    /// `trunc_tol` for a whole block, then validated at interval midpoints.
    pub fn build<F>(eval: F, x_min: f64, x_max: f64, opts: &InversionOptions) -> Result<Self>
    where
        F: Fn(f64) -> Result<(Complex64, Complex64)> + Sync + Send,
    {
        let mut ratio = opts.node_ratio;
        for attempt in 0..4 {
            let table = Self::build_once(&eval, x_min, ratio, opts)?;
            let err = table.validate(&eval, x_min, x_max, opts.exec)?;
            if err <= opts.interp_tol || attempt == 3 {
                if err > opts.interp_tol {
                    log::warn!(
                        "frequency interpolation error {err:e} exceeds {:e}",
                        opts.interp_tol
                    );
                }
                return Ok(Self {
                    interpolation_error: err,
                    ..table
                });
            }
            ratio = 1.0 + (ratio - 1.0) / 2.0;
        }
        unreachable!("the last attempt returns")
    }

    fn build_once<F>(eval: &F, x_min: f64, ratio: f64, opts: &InversionOptions) -> Result<Self>
    where
        F: Fn(f64) -> Result<(Complex64, Complex64)> + Sync + Send,
    {
        const BLOCK: usize = 32;
        let node = |j: usize| {
            if j == 0 {
                0.0
            } else {
                opts.node_min * ratio.powi(j as i32 - 1)
            }
        };
        let mut u = Vec::new();
        let mut phi = Vec::new();
        let mut psi = Vec::new();
        loop {
            let start = u.len();
            let block = opts.exec.try_map(BLOCK, |i| eval(node(start + i)))?;
            let mut all_small = true;
            for (i, (f, s)) in block.into_iter().enumerate() {
                if (f.re + x_min * s.re).exp() >= opts.trunc_tol {
                    all_small = false;
                }
                u.push(node(start + i));
                phi.push(f);
                psi.push(s);
            }
            if all_small {
                return Ok(Self {
                    u,
                    phi,
                    psi,
                    interpolation_error: 0.0,
                });
            }
            let last = *u.last().expect("nonempty");
            if last > opts.u_limit {
                let (f, s) = (phi[phi.len() - 1], psi[psi.len() - 1]);
                return Err(Error::Truncation {
                    u_max: last,
                    modulus: (f.re + x_min * s.re).exp(),
                });
            }
        }
    }

    fn validate<F>(&self, eval: &F, x_min: f64, x_max: f64, exec: Exec) -> Result<f64>
    where
        F: Fn(f64) -> Result<(Complex64, Complex64)> + Sync + Send,
    {
        let n = self.u.len();
        let probes: Vec<usize> = (0..n - 1).filter(|i| i % 7 == 3 || *i + 2 >= n).collect();
        let errs = exec.try_map(probes.len(), |p| {
            let i = probes[p];
            let u = 0.5 * (self.u[i] + self.u[i + 1]);
            let (f, s) = eval(u)?;
            let (fi, si) = self.at(u);
            Ok::<f64, Error>(
                [x_min, x_max]
                    .iter()
                    .map(|x| ((f + s * *x).exp() - (fi + si * *x).exp()).norm())
                    .fold(0.0, f64::max),
            )
        })?;
        Ok(errs.into_iter().fold(0.0, f64::max))
    }

    pub fn u_max(&self) -> f64 {
        *self.u.last().expect("nonempty table")
    }

    /// Interpolated `(φ, ψ)` at `u ∈ [0, u_max]`.
    pub fn at(&self, u: f64) -> (Complex64, Complex64) {
        let n = self.u.len();
        let i = self.u.partition_point(|v| *v <= u).saturating_sub(1);
        let lo = i.saturating_sub(1).min(n.saturating_sub(4));
        let hi = (lo + 4).min(n);
        (
            lagrange4(&self.u[lo..hi], &self.phi[lo..hi], u),
            lagrange4(&self.u[lo..hi], &self.psi[lo..hi], u),
        )
    }

    /// Largest node with `|e^{φ+xψ}| · weight(u, ψ) ≥ tol`.
    fn cutoff<W: Fn(f64, Complex64) -> f64>(&self, x: f64, tol: f64, weight: W) -> f64 {
        let mut cut = 0.0;
        for i in 0..self.u.len() {
            let m = (self.phi[i].re + x * self.psi[i].re).exp() * weight(self.u[i], self.psi[i]);
            if m >= tol {
                cut = self.u[(i + 1).min(self.u.len() - 1)];
            }
        }
        cut
    }

    /// Inverts `e^{φ + xψ} ψ^n (−iu)^k` onto `axis`, i.e. `∂_x^n ∂_y^k p`.
    pub fn invert(
        &self,
        x: f64,
        n: u32,
        k: u32,
        axis: &Axis,
        tol: f64,
        exec: Exec,
    ) -> (Vec<f64>, InversionDiagnostics) {
        let grid = FrequencyGrid::for_axis(axis);
        let u_cut = self.cutoff(x, tol, |u, s| s.norm().powi(n as i32) * u.powi(k as i32));
        let n_u = (u_cut / grid.du).floor() as usize + 1;
        let factor = |u: f64, s: Complex64| -> Complex64 {
            let mut f = Complex64::new(1.0, 0.0);
            for _ in 0..n {
                f *= s;
            }
            for _ in 0..k {
                f *= Complex64::new(0.0, -u);
            }
            f
        };
        let coeffs = exec.map_chunks(n_u, 4096, |r| {
            r.map(|j| {
                let u = grid.u(j);
                let (f, s) = self.at(u);
                (f + s * x).exp() * factor(u, s)
            })
            .collect()
        });
        let values = trapezoid_sum(&coeffs, &grid, axis);
        let diag = InversionDiagnostics {
            u_max: grid.u(n_u - 1),
            n_u,
            n_fft: grid.n_fft,
            du: grid.du,
            nodes: self.u.len(),
            interpolation_error: self.interpolation_error,
            ..Default::default()
        };
        (values, diag)
    }
}

fn require_1d(params: &ModelParams) -> Result<RiccatiSystem> {
    if params.m() != 1 {
        return Err(Error::InvalidArgument(format!(
            "one-dimensional inversion needs m = 1, got m = {}",
            params.m()
        )));
    }
    let sys = RiccatiSystem::new(params)?;
    match check_condition_a(params, &default_condition_grid(), None) {
        Ok(r) if !r.overall => {
            log::warn!("immigration condition not satisfied; the inversion may fail to truncate")
        }
        Err(e) => log::warn!("the immigration condition could not be checked: {e}"),
        _ => {}
    }
    Ok(sys)
}

/// Frequency table of `(φ(t,iu), ψ(t,iu))` for the 1D model, valid for initial states in `[x_min, x_max]`.
pub fn heat_kernel_table(
    params: &ModelParams,
    t: f64,
    x_min: f64,
    x_max: f64,
    opts: &InversionOptions,
) -> Result<ExponentTable> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "t must be positive, got {t}"
        )));
    }
    let sys = require_1d(params)?;
    ExponentTable::build(
        |u| {
            let s = sys.solve_at(&[Complex64::new(0.0, u)], t, &opts.riccati)?;
            Ok((s.phi, s.psi[0]))
        },
        x_min,
        x_max,
        opts,
    )
}

/// Clips negative values to 0 and records masses.
fn finish(
    axis: &Axis,
    mut values: Vec<f64>,
    mut diag: InversionDiagnostics,
    clip: bool,
) -> DensityGrid {
    let w = trapezoid_weights(axis);
    if clip {
        let mut clipped = 0.0;
        for (v, wi) in values.iter_mut().zip(&w) {
            if *v < 0.0 {
                clipped += -*v * wi;
                *v = 0.0;
            }
        }
        diag.clipped_mass = clipped;
    }
    diag.total_mass = values.iter().zip(&w).map(|(v, wi)| v * wi).sum();
    diag.suspect = diag.clipped_mass > 1e-4 * diag.total_mass.abs().max(f64::MIN_POSITIVE);
    if diag.suspect {
        log::warn!(
            "clipped mass {:e} exceeds 1e-4 of the total {:e}",
            diag.clipped_mass,
            diag.total_mass
        );
    }
    DensityGrid {
        axes: vec![*axis],
        values,
        weight: None,
        diagnostics: Some(diag),
    }
}

fn check_x(x: f64) -> Result<()> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "x must be finite and ≥ 0, got {x}"
        )));
    }
    Ok(())
}

/// `p_t(x, ·)` on `axis`.
pub fn heat_kernel_1d(
    params: &ModelParams,
    x: f64,
    t: f64,
    axis: &Axis,
    opts: &InversionOptions,
) -> Result<DensityGrid> {
    check_x(x)?;
    let table = heat_kernel_table(params, t, x, x, opts)?;
    let (values, diag) = table.invert(x, 0, 0, axis, opts.trunc_tol, opts.exec);
    Ok(finish(axis, values, diag, true))
}

/// `p_t(x, ·)` for several initial states from one frequency table.
pub fn heat_kernels_1d(
    params: &ModelParams,
    xs: &[f64],
    t: f64,
    axis: &Axis,
    opts: &InversionOptions,
) -> Result<Vec<DensityGrid>> {
    xs.iter().try_for_each(|x| check_x(*x))?;
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(0.0, f64::max);
    let table = heat_kernel_table(params, t, lo, hi, opts)?;
    let inner = Exec::Sequential;
    Ok(opts.exec.map(xs.len(), |i| {
        let (values, diag) = table.invert(xs[i], 0, 0, axis, opts.trunc_tol, inner);
        finish(axis, values, diag, true)
    }))
}

/// `∂_x^n ∂_y^k p_t(x, ·)` on `axis` (no clipping), `n + k ≤ 4`.
pub fn heat_kernel_derivative_1d(
    params: &ModelParams,
    x: f64,
    t: f64,
    axis: &Axis,
    n: u32,
    k: u32,
    opts: &InversionOptions,
) -> Result<DensityGrid> {
    check_x(x)?;
    if n + k > 4 {
        return Err(Error::InvalidArgument(format!(
            "derivative order n + k = {} exceeds 4",
            n + k
        )));
    }
    let table = heat_kernel_table(params, t, x, x, opts)?;
    let (values, diag) = table.invert(x, n, k, axis, opts.trunc_tol, opts.exec);
    Ok(finish(axis, values, diag, n + k == 0))
}

/// Density of the invariant law of a subcritical 1D model.
pub fn invariant_density_1d(
    params: &ModelParams,
    axis: &Axis,
    opts: &InversionOptions,
) -> Result<DensityGrid> {
    let sys = require_1d(params)?;
    let tol = opts.trunc_tol.min(1e-10);
    let table = ExponentTable::build(
        |u| {
            Ok((
                sys.invariant_exponent(&[Complex64::new(0.0, u)], tol, &opts.riccati)?,
                ZERO,
            ))
        },
        0.0,
        0.0,
        opts,
    )?;
    let (values, diag) = table.invert(0.0, 0, 0, axis, opts.trunc_tol, opts.exec);
    Ok(finish(axis, values, diag, true))
}

#[derive(Clone, Debug, Serialize)]
pub struct ChapmanKolmogorov {
    /// `∫ |∫ p_s(x,z) p_t(z,y) dz − p_{s+t}(x,y)| dy` over the y-axis.
    pub l1_defect: f64,
    pub z_points: usize,
}

/// Compares `∫ p_s(x,z) p_t(z,·) dz` (trapezoid over `z_axis`) with `p_{s+t}(x,·)`.
pub fn chapman_kolmogorov_1d(
    params: &ModelParams,
    x: f64,
    s: f64,
    t: f64,
    z_axis: &Axis,
    y_axis: &Axis,
    opts: &InversionOptions,
) -> Result<ChapmanKolmogorov> {
    let first = heat_kernel_1d(params, x, s, z_axis, opts)?;
    let whole = heat_kernel_1d(params, x, s + t, y_axis, opts)?;
    let zs: Vec<f64> = z_axis.points().into_iter().map(|z| z.max(0.0)).collect();
    let kernels = heat_kernels_1d(params, &zs, t, y_axis, opts)?;
    let wz = trapezoid_weights(z_axis);
    let mut composed = vec![0.0; y_axis.count];
    for (j, kern) in kernels.iter().enumerate() {
        let c = wz[j] * first.values[j];
        if c == 0.0 {
            continue;
        }
        for (o, v) in composed.iter_mut().zip(&kern.values) {
            *o += c * v;
        }
    }
    let wy = trapezoid_weights(y_axis);
    let l1_defect = composed
        .iter()
        .zip(&whole.values)
        .zip(&wy)
        .map(|((a, b), w)| (a - b).abs() * w)
        .sum();
    Ok(ChapmanKolmogorov {
        l1_defect,
        z_points: zs.len(),
    })
}

/// Probabilities of the bins `[edges_i, edges_{i+1})` under a 1D density grid
/// (trapezoid on the grid, linear interpolation at bin ends).
pub fn bin_probabilities(grid: &DensityGrid, edges: &[f64]) -> Vec<f64> {
    let axis = &grid.axes[0];
    let f = |y: f64| -> f64 {
        let pos = (y - axis.origin) / axis.step;
        if pos < 0.0 || pos > (axis.count - 1) as f64 {
            return 0.0;
        }
        let i = (pos.floor() as usize).min(axis.count - 2);
        let w = pos - i as f64;
        grid.values[i] * (1.0 - w) + grid.values[i + 1] * w
    };
    edges
        .windows(2)
        .map(|e| {
            let (a, b) = (e[0].max(axis.origin), e[1].min(axis.last()));
            if b <= a {
                return 0.0;
            }
            // breakpoints at grid nodes inside (a, b)
            let mut pts = vec![a];
            let first = ((a - axis.origin) / axis.step).floor() as usize + 1;
            let mut i = first;
            while i < axis.count && axis.point(i) < b {
                pts.push(axis.point(i));
                i += 1;
            }
            pts.push(b);
            pts.windows(2)
                .map(|p| 0.5 * (f(p[0]) + f(p[1])) * (p[1] - p[0]))
                .sum()
        })
        .collect()
}
