//! Fourier inversion of characteristic functions onto a uniform axis.
//!
//! For a real random variable with characteristic function `φ`,
//! `p(y) = (1/π) Re ∫_0^∞ e^{−iuy} φ(u) du`. The integral is discretized by
//! the trapezoid rule on `u_k = kΔu` and all axis points are produced by one
//! FFT; coefficients with `k ≥ N` are folded modulo `N`, which evaluates the
//! same trapezoid sum exactly.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Uniform grid `origin + i·step`, `i < count`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub origin: f64,
    pub step: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(origin: f64, step: f64, count: usize) -> Self {
        Self {
            origin,
            step,
            count,
        }
    }

    /// `count` points from `lo` to `hi` inclusive.
    pub fn linspace(lo: f64, hi: f64, count: usize) -> Self {
        let step = if count > 1 {
            (hi - lo) / (count - 1) as f64
        } else {
            1.0
        };
        Self {
            origin: lo,
            step,
            count,
        }
    }

    pub fn point(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.step
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.point(i)).collect()
    }

    pub fn last(&self) -> f64 {
        self.point(self.count.saturating_sub(1))
    }

    pub fn span(&self) -> f64 {
        self.last() - self.origin
    }

    pub fn max_abs(&self) -> f64 {
        self.origin.abs().max(self.last().abs())
    }
}

/// FFT length and frequency step used for a target axis.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct FrequencyGrid {
    pub n_fft: usize,
    pub du: f64,
}

impl FrequencyGrid {
    /// Period at least `2.2·max|y|` (so `Δu ≤ π/(1.1·max|y|)`) and at least the axis length.
    pub fn for_axis(axis: &Axis) -> Self {
        let need = ((2.2 * axis.max_abs() / axis.step).ceil() as usize).max(axis.count);
        let n_fft = need.next_power_of_two();
        Self {
            n_fft,
            du: 2.0 * std::f64::consts::PI / (n_fft as f64 * axis.step),
        }
    }

    pub fn u(&self, k: usize) -> f64 {
        k as f64 * self.du
    }
}

/// Evaluates `eval(k)` for `k = 0, 1, …` in blocks until `modulus` stays
/// below `tol` for a full trailing block. Errors if `k·du` passes `u_limit`.
pub fn march<T, F, M>(
    eval: F,
    modulus: M,
    du: f64,
    tol: f64,
    u_limit: f64,
    exec: Exec,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
    M: Fn(&T) -> f64,
{
    const BLOCK: usize = 64;
    let mut out: Vec<T> = Vec::new();
    loop {
        let start = out.len();
        let block = exec.try_map(BLOCK, |i| eval(start + i))?;
        let all_small = block.iter().all(|v| modulus(v) < tol);
        let last_mod = block.last().map(&modulus).unwrap_or(0.0);
        out.extend(block);
        if all_small {
            // drop the trailing block of negligible values except one sentinel
            let mut keep = out.len();
            while keep > 1 && modulus(&out[keep - 1]) < tol {
                keep -= 1;
            }
            out.truncate(keep + 1);
            return Ok(out);
        }
        if (out.len() as f64) * du > u_limit {
            return Err(Error::Truncation {
                u_max: out.len() as f64 * du,
                modulus: last_mod,
            });
        }
    }
}

/// `(Δu/π) Re Σ_k w_k c_k e^{−iu_k y_j}` on the axis, with `w_0 = 1/2`.
pub fn trapezoid_sum(coeffs: &[Complex64], grid: &FrequencyGrid, axis: &Axis) -> Vec<f64> {
    let n = grid.n_fft;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (k, c) in coeffs.iter().enumerate() {
        let w = if k == 0 { 0.5 } else { 1.0 };
        let phase = Complex64::from_polar(1.0, -grid.u(k) * axis.origin);
        buf[k % n] += c * phase * w;
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let scale = grid.du / std::f64::consts::PI;
    buf[..axis.count].iter().map(|z| z.re * scale).collect()
}

#[derive(Clone, Debug)]
pub struct Inversion {
    pub values: Vec<f64>,
    pub u_max: f64,
    pub n_u: usize,
    pub grid: FrequencyGrid,
}

/// Inverts `char_fn` (evaluated for `u ≥ 0`) onto `axis`.
pub fn invert_on_axis<F>(
    char_fn: F,
    axis: &Axis,
    tol: f64,
    u_limit: f64,
    exec: Option<Exec>,
) -> Result<Inversion>
where
    F: Fn(f64) -> Complex64 + Sync + Send,
{
    let grid = FrequencyGrid::for_axis(axis);
    let coeffs = march(
        |k| Ok(char_fn(grid.u(k))),
        |c: &Complex64| c.norm(),
        grid.du,
        tol,
        u_limit,
        exec.unwrap_or_default(),
    )?;
    let values = trapezoid_sum(&coeffs, &grid, axis);
    Ok(Inversion {
        values,
        u_max: grid.u(coeffs.len() - 1),
        n_u: coeffs.len(),
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_round_trip() {
        let axis = Axis::linspace(-6.0, 6.0, 241);
        let inv = invert_on_axis(
            |u| Complex64::new((-0.5 * u * u).exp(), 0.0),
            &axis,
            1e-15,
            100.0,
            None,
        )
        .unwrap();
        for (y, p) in axis.points().iter().zip(&inv.values) {
            let want = (-0.5 * y * y).exp() / (2.0 * std::f64::consts::PI).sqrt();
            assert!((p - want).abs() < 1e-12, "y={y}");
        }
    }

    #[test]
    fn shifted_exponential_with_folding() {
        // Exp(1) density, char 1/(1 − iu); coarse step forces many folded coefficients
        let axis = Axis::new(0.5, 0.05, 200);
        let inv = invert_on_axis(
            |u| Complex64::new(1.0, 0.0) / Complex64::new(1.0, -u),
            &axis,
            1e-4,
            1e6,
            None,
        )
        .unwrap();
        assert!(inv.n_u > FrequencyGrid::for_axis(&axis).n_fft);
        for (y, p) in axis.points().iter().zip(&inv.values) {
            assert!((p - (-y).exp()).abs() < 2e-3, "y={y}: {p}");
        }
    }

    #[test]
    fn truncation_failure_reported() {
        let axis = Axis::linspace(-1.0, 1.0, 11);
        let r = invert_on_axis(|_| Complex64::new(0.5, 0.0), &axis, 1e-12, 50.0, None);
        assert!(matches!(r, Err(Error::Truncation { .. })));
    }
}
