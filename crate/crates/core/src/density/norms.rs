use serde::Serialize;

use super::DensityGrid;
use crate::error::{Error, Result};
use crate::numerics::fourier::Axis;

/// `ᾱ` with `1/ᾱ = (1/m) Σ 1/α_i`, and `a_i = ᾱ/α_i` (so `Σ a_i = m`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Anisotropy {
    pub alpha_bar: f64,
    pub a: Vec<f64>,
}

pub fn anisotropy(alpha: &[f64]) -> Result<Anisotropy> {
    if alpha.is_empty() || alpha.iter().any(|a| !(*a > 1.0 && *a < 2.0)) {
        return Err(Error::InvalidArgument(
            "every alpha_i must lie in (1,2)".into(),
        ));
    }
    let m = alpha.len() as f64;
    let alpha_bar = m / alpha.iter().map(|a| 1.0 / a).sum::<f64>();
    Ok(Anisotropy {
        alpha_bar,
        a: alpha.iter().map(|a| alpha_bar / a).collect(),
    })
}

/// `ρ_δ(y) = min{δ, y_1^{1/α_1}, …, y_m^{1/α_m}}` on the orthant, 0 outside.
pub fn rho_delta(y: &[f64], delta: f64, alpha: &[f64]) -> f64 {
    if y.iter().any(|v| *v < 0.0) {
        return 0.0;
    }
    y.iter()
        .zip(alpha)
        .map(|(v, a)| v.powf(1.0 / a))
        .fold(delta, f64::min)
}

/// 17 log-spaced magnitudes in `[h_min, 1]`, each with both signs.
pub fn default_h_set(h_min: f64) -> Vec<f64> {
    let lo = h_min.clamp(1e-12, 1.0).log10();
    let mut out = Vec::with_capacity(34);
    for i in 0..17 {
        let h = 10f64.powf(lo + (0.0 - lo) * i as f64 / 16.0);
        out.push(-h);
        out.push(h);
    }
    out
}

/// `f(· + h e_axis) − f` on the grid, linear interpolation, zero outside.
pub fn difference(grid: &DensityGrid, axis: usize, h: f64) -> Vec<f64> {
    let ax = &grid.axes[axis];
    let stride: usize = grid.axes[axis + 1..].iter().map(|a| a.count).product();
    let shift = h / ax.step;
    let whole = shift.floor();
    let frac = shift - whole;
    let whole = whole as i64;
    let n = ax.count as i64;
    let at = |i: usize, j: i64| -> f64 {
        if j < 0 || j >= n {
            0.0
        } else {
            let base = i - ((i / stride) % ax.count) * stride;
            grid.values[base + j as usize * stride]
        }
    };
    (0..grid.values.len())
        .map(|i| {
            let j = ((i / stride) % ax.count) as i64 + whole;
            let shifted = if frac == 0.0 {
                at(i, j)
            } else {
                at(i, j) * (1.0 - frac) + at(i, j + 1) * frac
            };
            shifted - grid.values[i]
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct NormTerms {
    pub base: f64,
    /// Per axis: the supremum and the `h` attaining it.
    pub axis_terms: Vec<(f64, f64)>,
    pub total: f64,
}

fn smoothness_norm(
    grid: &DensityGrid,
    order: f64,
    aniso: &Anisotropy,
    h_set: &[f64],
    base: fn(&DensityGrid) -> f64,
) -> Result<NormTerms> {
    if aniso.a.len() != grid.dims() {
        return Err(Error::InvalidArgument(
            "anisotropy and grid dimensions differ".into(),
        ));
    }
    for (k, a) in aniso.a.iter().enumerate() {
        let s = order / a;
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "smoothness order / a_{k} = {s} must lie in (0,1)"
            )));
        }
    }
    if h_set.is_empty() || h_set.iter().any(|h| *h == 0.0 || h.abs() > 1.0) {
        return Err(Error::InvalidArgument(
            "h_set must be a nonempty subset of [−1,1]∖{0}".into(),
        ));
    }
    let b = base(grid);
    let mut axis_terms = Vec::with_capacity(grid.dims());
    for (k, ax) in grid.axes.iter().enumerate() {
        let h_min = h_set.iter().fold(f64::INFINITY, |m, h| m.min(h.abs()));
        if h_min < ax.step * (1.0 - 1e-9) {
            return Err(Error::GridTooCoarse(format!(
                "min |h| = {h_min:e} is below the step {:e} of axis {k}",
                ax.step
            )));
        }
        let s = order / aniso.a[k];
        let mut best = (0.0, h_set[0]);
        for &h in h_set {
            let diff = DensityGrid::new(grid.axes.clone(), difference(grid, k, h));
            let v = h.abs().powf(-s) * base(&diff);
            if v > best.0 {
                best = (v, h);
            }
        }
        axis_terms.push(best);
    }
    let total = b + axis_terms.iter().map(|t| t.0).sum::<f64>();
    Ok(NormTerms {
        base: b,
        axis_terms,
        total,
    })
}

/// `‖f‖_{L1} + Σ_k max_{h ∈ h_set} |h|^{−λ/a_k} ‖Δ_{h e_k} f‖_{L1}`.
pub fn besov_terms(
    grid: &DensityGrid,
    lambda: f64,
    aniso: &Anisotropy,
    h_set: &[f64],
) -> Result<NormTerms> {
    smoothness_norm(grid, lambda, aniso, h_set, DensityGrid::l1_norm)
}

pub fn besov_norm(
    grid: &DensityGrid,
    lambda: f64,
    aniso: &Anisotropy,
    h_set: &[f64],
) -> Result<f64> {
    Ok(besov_terms(grid, lambda, aniso, h_set)?.total)
}

/// `‖f‖_∞ + Σ_k max_{h ∈ h_set} |h|^{−η/a_k} ‖Δ_{h e_k} f‖_∞`.
pub fn holder_zygmund_terms(
    grid: &DensityGrid,
    eta: f64,
    aniso: &Anisotropy,
    h_set: &[f64],
) -> Result<NormTerms> {
    smoothness_norm(grid, eta, aniso, h_set, DensityGrid::sup_norm)
}

pub fn holder_zygmund_norm(
    grid: &DensityGrid,
    eta: f64,
    aniso: &Anisotropy,
    h_set: &[f64],
) -> Result<f64> {
    Ok(holder_zygmund_terms(grid, eta, aniso, h_set)?.total)
}

/// Per-axis `a_i · 1.06 · min(sd, IQR/1.34) · n^{−1/(m+4)}`.
pub fn default_bandwidth(samples: &[f64], m: usize, aniso: &Anisotropy) -> Vec<f64> {
    let n = samples.len() / m;
    (0..m)
        .map(|k| {
            let mut col: Vec<f64> = samples.iter().skip(k).step_by(m).copied().collect();
            col.sort_by(f64::total_cmp);
            let mean = col.iter().sum::<f64>() / n as f64;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / (n as f64 - 1.0).max(1.0))
            .sqrt();
            let q = |p: f64| col[((n - 1) as f64 * p).round() as usize];
            let iqr = (q(0.75) - q(0.25)) / 1.34;
            let spread = if iqr > 0.0 { sd.min(iqr) } else { sd };
            aniso.a[k] * 1.06 * spread * (n as f64).powf(-1.0 / (m as f64 + 4.0))
        })
        .collect()
}

pub const KDE_MIN_SAMPLES: usize = 10_000;

/// Gaussian product-kernel estimate of `ρ_δ · p` on the grid spanned by
/// `axes`, computed by linear binning and separable convolution.
pub fn weighted_kde(
    samples: &[f64],
    m: usize,
    delta: f64,
    alpha: &[f64],
    axes: &[Axis],
    bandwidth: Option<&[f64]>,
) -> Result<DensityGrid> {
    let n = samples.len() / m;
    if n < KDE_MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "weighted_kde needs at least {KDE_MIN_SAMPLES} samples, got {n}"
        )));
    }
    if axes.len() != m || alpha.len() != m {
        return Err(Error::InvalidArgument(
            "axes/alpha must have one entry per coordinate".into(),
        ));
    }
    let aniso = anisotropy(alpha)?;
    let h: Vec<f64> = match bandwidth {
        Some(b) if b.len() == m && b.iter().all(|v| *v > 0.0) => b.to_vec(),
        Some(_) => {
            return Err(Error::InvalidArgument(
                "bandwidth must be positive per axis".into(),
            ))
        }
        None => default_bandwidth(samples, m, &aniso),
    };
    let counts: Vec<usize> = axes.iter().map(|a| a.count).collect();
    let total: usize = counts.iter().product();
    let strides: Vec<usize> = (0..m).map(|d| counts[d + 1..].iter().product()).collect();
    // linear binning: each sample spreads unit mass over the 2^m surrounding nodes
    let mut bins = vec![0.0; total];
    'sample: for row in samples.chunks_exact(m) {
        let mut base = 0usize;
        let mut frac = vec![0.0; m];
        for d in 0..m {
            let pos = (row[d] - axes[d].origin) / axes[d].step;
            if pos < 0.0 || pos > (counts[d] - 1) as f64 {
                continue 'sample;
            }
            let i = (pos.floor() as usize).min(counts[d].saturating_sub(2));
            frac[d] = pos - i as f64;
            base += i * strides[d];
        }
        for corner in 0..(1usize << m) {
            let mut w = 1.0;
            let mut idx = base;
            for d in 0..m {
                if corner >> d & 1 == 1 {
                    w *= frac[d];
                    idx += strides[d];
                } else {
                    w *= 1.0 - frac[d];
                }
            }
            if w > 0.0 {
                bins[idx] += w;
            }
        }
    }
    for b in bins.iter_mut() {
        *b /= n as f64;
    }
    // separable Gaussian smoothing, kernel truncated at 5 bandwidths
    let mut cur = bins;
    for d in 0..m {
        let step = axes[d].step;
        let half = ((5.0 * h[d] / step).ceil() as usize).min(counts[d]);
        let kern: Vec<f64> = (0..=half)
            .map(|j| {
                let z = j as f64 * step / h[d];
                (-0.5 * z * z).exp() / (h[d] * (2.0 * std::f64::consts::PI).sqrt())
            })
            .collect();
        let mut next = vec![0.0; total];
        for (i, out) in next.iter_mut().enumerate() {
            let j = (i / strides[d]) % counts[d];
            let base = i - j * strides[d];
            let lo = j.saturating_sub(half);
            let hi = (j + half).min(counts[d] - 1);
            let mut acc = 0.0;
            for q in lo..=hi {
                acc += cur[base + q * strides[d]] * kern[q.abs_diff(j)];
            }
            *out = acc;
        }
        cur = next;
    }
    let mut grid = DensityGrid::new(axes.to_vec(), cur);
    for i in 0..total {
        let y: Vec<f64> = grid
            .index(i)
            .iter()
            .enumerate()
            .map(|(d, &j)| axes[d].point(j))
            .collect();
        grid.values[i] *= rho_delta(&y, delta, alpha);
    }
    grid.weight = Some(delta);
    Ok(grid)
}
