//! Closed forms for power-law Lévy integrals.
//!
//! The workhorse is the windowed one-sided stable exponent
//! `∫_lo^hi (e^{s r} − 1) r^{−1−θ} dr` for `Re s ≤ 0`, evaluated by a power
//! series for small `|s r|` and by a continued fraction for the upper
//! incomplete gamma function otherwise.

use num_complex::Complex64;
use statrs::function::gamma::gamma;

const SERIES_RADIUS: f64 = 2.0;
const CF_MAX_ITER: usize = 20_000;

/// `Γ(1−θ)/θ`, the Laplace constant of the one-sided θ-stable density `r^{−1−θ}`.
pub fn stable_laplace_constant(theta: f64) -> f64 {
    gamma(1.0 - theta) / theta
}

/// `(−u)^p` on the principal branch.
pub fn neg_pow(u: Complex64, p: f64) -> Complex64 {
    let w = -u;
    if w.re == 0.0 && w.im == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    if w.im == 0.0 && w.re > 0.0 {
        return Complex64::new(w.re.powf(p), 0.0);
    }
    (w.ln() * p).exp()
}

/// `e^z − 1` without cancellation for small `|z|`.
pub fn exp_m1(z: Complex64) -> Complex64 {
    if z.norm() < 1e-2 {
        let mut term = z;
        let mut sum = z;
        for n in 2..10 {
            term = term * z / n as f64;
            sum += term;
        }
        sum
    } else {
        z.exp() - 1.0
    }
}

/// `∫_0^∞ (e^{s r} − 1) r^{−1−θ} dr = −Γ(1−θ)/θ · (−s)^θ`.
pub fn stable_exponent_full(s: Complex64, theta: f64) -> Complex64 {
    -neg_pow(s, theta) * stable_laplace_constant(theta)
}

fn series_head(s: Complex64, theta: f64, r: f64) -> Complex64 {
    // R^{−θ} Σ_{n≥1} (sR)^n / (n! (n − θ))
    let z = s * r;
    let mut term = Complex64::new(1.0, 0.0);
    let mut sum = Complex64::new(0.0, 0.0);
    for n in 1..200 {
        term = term * z / n as f64;
        let add = term / (n as f64 - theta);
        sum += add;
        if add.norm() <= 1e-17 * sum.norm().max(1e-300) {
            break;
        }
    }
    sum * r.powf(-theta)
}

/// Continued fraction `h` with `Γ(a, w) = e^{−w} w^a h(a, w)`, valid for `Re w ≥ 0`, `|w|` not small.
fn upper_gamma_cf(a: f64, w: Complex64) -> Complex64 {
    let tiny = 1e-300;
    let mut b = w + (1.0 - a);
    let mut c = Complex64::new(1.0 / tiny, 0.0);
    let mut d = Complex64::new(1.0, 0.0) / b;
    let mut h = d;
    for i in 1..CF_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = b + d * an;
        if d.norm() < tiny {
            d = Complex64::new(tiny, 0.0);
        }
        c = b + c.inv() * an;
        if c.norm() < tiny {
            c = Complex64::new(tiny, 0.0);
        }
        d = d.inv();
        let del = d * c;
        h *= del;
        if (del - 1.0).norm() < 1e-16 {
            break;
        }
    }
    h
}

/// `∫_0^R (e^{s r} − 1) r^{−1−θ} dr` for `Re s ≤ 0`, `R ∈ (0, ∞]`.
pub fn stable_exponent_head(s: Complex64, theta: f64, r: f64) -> Complex64 {
    if r <= 0.0 || (s.re == 0.0 && s.im == 0.0) {
        return Complex64::new(0.0, 0.0);
    }
    if r.is_infinite() {
        return stable_exponent_full(s, theta);
    }
    if (s * r).norm() <= SERIES_RADIUS {
        return series_head(s, theta, r);
    }
    let h = upper_gamma_cf(-theta, -s * r);
    let tail = (s * r).exp() * h * r.powf(-theta);
    stable_exponent_full(s, theta) + r.powf(-theta) / theta - tail
}

/// `∫_lo^hi (e^{s r} − 1) r^{−1−θ} dr` for `Re s ≤ 0`, `0 ≤ lo ≤ hi ≤ ∞`.
pub fn stable_exponent_window(s: Complex64, theta: f64, lo: f64, hi: f64) -> Complex64 {
    if hi <= lo {
        return Complex64::new(0.0, 0.0);
    }
    stable_exponent_head(s, theta, hi) - stable_exponent_head(s, theta, lo)
}

/// `∫_lo^hi r^{p} dr` with `hi` possibly infinite (returns `∞` when divergent).
pub fn power_integral(p: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    if (p + 1.0).abs() < 1e-14 {
        return if lo == 0.0 || hi.is_infinite() {
            f64::INFINITY
        } else {
            (hi / lo).ln()
        };
    }
    let q = p + 1.0;
    if hi.is_infinite() {
        return if q < 0.0 {
            -lo.powf(q) / q
        } else {
            f64::INFINITY
        };
    }
    if lo == 0.0 && q < 0.0 {
        return f64::INFINITY;
    }
    (hi.powf(q) - lo.powf(q)) / q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::quad::{integrate, integrate_to_infinity, QuadOptions};

    fn oracle(s: Complex64, theta: f64, lo: f64, hi: f64) -> Complex64 {
        let f = |r: f64| exp_m1(s * r) * r.powf(-1.0 - theta);
        let opts = QuadOptions {
            abs_tol: 1e-14,
            rel_tol: 1e-12,
            max_intervals: 20_000,
        };
        // r = v^p with p = 1/(1-θ) removes the r^{-θ} singularity at the origin
        let p = 1.0 / (1.0 - theta);
        let cut = hi.min(1.0);
        let mut total = Complex64::new(0.0, 0.0);
        if lo < cut {
            total += integrate(
                |v: f64| f(v.powf(p)) * (p * v.powf(p - 1.0)),
                lo.powf(1.0 / p),
                cut.powf(1.0 / p),
                opts,
            )
            .value;
        }
        let a = lo.max(1.0);
        if hi.is_infinite() {
            total += integrate_to_infinity(f, a, opts).value;
        } else if a < hi {
            total += integrate(f, a, hi, opts).value;
        }
        total
    }

    #[test]
    fn full_line_real_matches_quadrature() {
        let s = Complex64::new(-4.0, 0.0);
        let got = stable_exponent_full(s, 0.5);
        let want = oracle(s, 0.5, 0.0, f64::INFINITY);
        assert!((got - want).norm() < 1e-7, "{got} vs {want}");
        assert!((got.re + 2.0 * 2.0 * std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn window_matches_quadrature_over_regimes() {
        let thetas = [0.2, 0.6, 0.9];
        let ss = [
            Complex64::new(-0.3, 0.0),
            Complex64::new(0.0, 1.5),
            Complex64::new(-2.0, 7.0),
            Complex64::new(0.0, -40.0),
            Complex64::new(-25.0, 0.0),
        ];
        let windows = [(0.0, 0.5), (0.0, 5.0), (0.01, 3.0), (1.0, 5.0)];
        for &th in &thetas {
            for &s in &ss {
                for &(lo, hi) in &windows {
                    let got = stable_exponent_window(s, th, lo, hi);
                    let want = oracle(s, th, lo, hi);
                    assert!(
                        (got - want).norm() < 1e-8 * (1.0 + want.norm()),
                        "θ={th} s={s} [{lo},{hi}]: {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn series_and_fraction_agree_at_switch() {
        for &th in &[0.3, 0.7] {
            for &phase in &[0.0, 0.7, 1.57] {
                let dir = Complex64::from_polar(1.0, std::f64::consts::PI - phase);
                let r = 1.0;
                let exact_series = series_head(dir * (SERIES_RADIUS * 1.5), th, r);
                let cf = stable_exponent_head(dir * (SERIES_RADIUS * 1.5), th, r);
                assert!((exact_series - cf).norm() < 1e-10, "{exact_series} vs {cf}");
            }
        }
    }

    #[test]
    fn neg_pow_principal_branch() {
        let v = neg_pow(Complex64::new(0.0, 1.0), 1.5);
        let want = Complex64::from_polar(1.0, -0.75 * std::f64::consts::PI);
        assert!((v - want).norm() < 1e-14);
        assert_eq!(
            neg_pow(Complex64::new(-1.0, 0.0), 1.5),
            Complex64::new(1.0, 0.0)
        );
    }

    #[test]
    fn power_integral_cases() {
        assert!((power_integral(-0.6, 0.0, 1.0) - 2.5).abs() < 1e-14);
        assert!(power_integral(-0.6, 0.0, f64::INFINITY).is_infinite());
        assert!((power_integral(-1.6, 1.0, f64::INFINITY) - 1.0 / 0.6).abs() < 1e-14);
    }
}
