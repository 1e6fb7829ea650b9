//! Dormand–Prince 5(4) integrator for complex-valued autonomous systems.
//!
//! Steps are clipped so that every requested output time is hit exactly,
//! which keeps the reported values at full step accuracy instead of relying
//! on interpolation.

use num_complex::Complex64;

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_min: 1e-14,
            h_max: f64::INFINITY,
            max_steps: 1_000_000,
        }
    }
}

/// Returned by the per-step observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct OdeSolution {
    /// Output times actually reached (a prefix of the requested ones when stopped early).
    pub times: Vec<f64>,
    pub states: Vec<Vec<Complex64>>,
    /// Time and state at which an observer stopped the integration, if it did.
    pub stopped: Option<(f64, Vec<Complex64>)>,
    pub accepted: usize,
    pub rejected: usize,
}

fn error_norm(y: &[Complex64], y_new: &[Complex64], err: &[Complex64], o: &OdeOptions) -> f64 {
    let mut acc = 0.0;
    for i in 0..y.len() {
        let sc = o.atol + o.rtol * y[i].norm().max(y_new[i].norm());
        let r = err[i].norm() / sc;
        acc += r * r;
    }
    (acc / y.len().max(1) as f64).sqrt()
}

fn initial_step<F>(
    rhs: &mut F,
    t: f64,
    y: &[Complex64],
    f0: &[Complex64],
    o: &OdeOptions,
) -> Result<f64>
where
    F: FnMut(f64, &[Complex64], &mut [Complex64]) -> Result<()>,
{
    let n = y.len();
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for i in 0..n {
        let sc = o.atol + o.rtol * y[i].norm();
        d0 += (y[i].norm() / sc).powi(2);
        d1 += (f0[i].norm() / sc).powi(2);
    }
    d0 = (d0 / n as f64).sqrt();
    d1 = (d1 / n as f64).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let y1: Vec<Complex64> = (0..n).map(|i| y[i] + f0[i] * h0).collect();
    let mut f1 = vec![Complex64::new(0.0, 0.0); n];
    rhs(t + h0, &y1, &mut f1)?;
    let mut d2 = 0.0;
    for i in 0..n {
        let sc = o.atol + o.rtol * y[i].norm();
        d2 += ((f1[i] - f0[i]).norm() / sc).powi(2);
    }
    d2 = (d2 / n as f64).sqrt() / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(o.h_max))
}

/// Integrates `y' = rhs(t, y)` from `t0`, reporting the state at each of the
/// increasing `t_out` (all `≥ t0`). `on_step` sees every accepted step and
/// may stop the integration.
pub fn solve<F, O>(
    mut rhs: F,
    t0: f64,
    y0: &[Complex64],
    t_out: &[f64],
    opts: &OdeOptions,
    mut on_step: O,
) -> Result<OdeSolution>
where
    F: FnMut(f64, &[Complex64], &mut [Complex64]) -> Result<()>,
    O: FnMut(f64, &[Complex64]) -> Result<Flow>,
{
    let n = y0.len();
    let zero = Complex64::new(0.0, 0.0);
    let mut sol = OdeSolution {
        times: Vec::with_capacity(t_out.len()),
        states: Vec::with_capacity(t_out.len()),
        stopped: None,
        accepted: 0,
        rejected: 0,
    };
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut idx = 0;
    while idx < t_out.len() && t_out[idx] <= t0 {
        sol.times.push(t_out[idx]);
        sol.states.push(y.clone());
        idx += 1;
    }
    if idx == t_out.len() {
        return Ok(sol);
    }
    let mut k1 = vec![zero; n];
    rhs(t, &y, &mut k1)?;
    let mut h = initial_step(&mut rhs, t, &y, &k1, opts)?;
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) = (
        vec![zero; n],
        vec![zero; n],
        vec![zero; n],
        vec![zero; n],
        vec![zero; n],
        vec![zero; n],
    );
    let mut tmp = vec![zero; n];
    let mut y_new = vec![zero; n];
    let mut err = vec![zero; n];
    let mut steps = 0usize;

    while idx < t_out.len() {
        let target = t_out[idx];
        let mut hit = false;
        let mut h_try = h.min(opts.h_max);
        if t + h_try >= target - 1e-14 * target.abs().max(1.0) {
            h_try = target - t;
            hit = true;
        }
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::StepFailure {
                t,
                h: h_try,
                context: format!("exceeded {} steps", opts.max_steps),
            });
        }
        if h_try < opts.h_min && !hit {
            return Err(Error::StepFailure {
                t,
                h: h_try,
                context: "step size fell below minimum".into(),
            });
        }

        for i in 0..n {
            tmp[i] = y[i] + k1[i] * (h_try * A21);
        }
        rhs(t + C2 * h_try, &tmp, &mut k2)?;
        for i in 0..n {
            tmp[i] = y[i] + (k1[i] * A31 + k2[i] * A32) * h_try;
        }
        rhs(t + C3 * h_try, &tmp, &mut k3)?;
        for i in 0..n {
            tmp[i] = y[i] + (k1[i] * A41 + k2[i] * A42 + k3[i] * A43) * h_try;
        }
        rhs(t + C4 * h_try, &tmp, &mut k4)?;
        for i in 0..n {
            tmp[i] = y[i] + (k1[i] * A51 + k2[i] * A52 + k3[i] * A53 + k4[i] * A54) * h_try;
        }
        rhs(t + C5 * h_try, &tmp, &mut k5)?;
        for i in 0..n {
            tmp[i] = y[i]
                + (k1[i] * A61 + k2[i] * A62 + k3[i] * A63 + k4[i] * A64 + k5[i] * A65) * h_try;
        }
        rhs(t + h_try, &tmp, &mut k6)?;
        for i in 0..n {
            y_new[i] = y[i]
                + (k1[i] * A71 + k3[i] * A73 + k4[i] * A74 + k5[i] * A75 + k6[i] * A76) * h_try;
        }
        rhs(t + h_try, &y_new, &mut k7)?;
        for i in 0..n {
            err[i] = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7)
                * h_try;
        }
        let en = error_norm(&y, &y_new, &err, opts);
        if !en.is_finite() {
            h = h_try * 0.2;
            sol.rejected += 1;
            if h < opts.h_min {
                return Err(Error::StepFailure {
                    t,
                    h,
                    context: "non-finite stage values".into(),
                });
            }
            continue;
        }
        let fac = if en == 0.0 {
            10.0
        } else {
            (0.9 * en.powf(-0.2)).clamp(0.2, 10.0)
        };
        if en <= 1.0 {
            t = if hit { target } else { t + h_try };
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            sol.accepted += 1;
            if !hit || h_try >= 0.5 * h {
                h = h_try * fac;
            }
            if on_step(t, &y)? == Flow::Stop {
                sol.stopped = Some((t, y.clone()));
                break;
            }
            while idx < t_out.len() && t_out[idx] <= t {
                sol.times.push(t_out[idx]);
                sol.states.push(y.clone());
                idx += 1;
            }
        } else {
            sol.rejected += 1;
            h = h_try * fac.min(1.0);
            if h < opts.h_min {
                return Err(Error::StepFailure {
                    t,
                    h,
                    context: "step size fell below minimum".into(),
                });
            }
        }
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_complex_decay() {
        let lam = Complex64::new(-1.0, 3.0);
        let y0 = [Complex64::new(1.0, 0.0)];
        let t_out = [0.0, 0.5, 1.0, 2.0];
        let sol = solve(
            |_, y, dy| {
                dy[0] = lam * y[0];
                Ok(())
            },
            0.0,
            &y0,
            &t_out,
            &OdeOptions::default(),
            |_, _| Ok(Flow::Continue),
        )
        .unwrap();
        for (t, s) in sol.times.iter().zip(&sol.states) {
            let want = (lam * *t).exp();
            assert!((s[0] - want).norm() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn logistic_matches_closed_form() {
        let y0 = [Complex64::new(0.1, 0.0)];
        let t_out: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let sol = solve(
            |_, y, dy| {
                dy[0] = y[0] * (Complex64::new(1.0, 0.0) - y[0]);
                Ok(())
            },
            0.0,
            &y0,
            &t_out,
            &OdeOptions::default(),
            |_, _| Ok(Flow::Continue),
        )
        .unwrap();
        for (t, s) in sol.times.iter().zip(&sol.states) {
            let want = 1.0 / (1.0 + 9.0 * (-t).exp());
            assert!((s[0].re - want).abs() < 1e-9);
        }
    }

    #[test]
    fn observer_can_stop() {
        let sol = solve(
            |_, y, dy| {
                dy[0] = -y[0];
                Ok(())
            },
            0.0,
            &[Complex64::new(1.0, 0.0)],
            &[100.0],
            &OdeOptions::default(),
            |_, y| {
                Ok(if y[0].re < 0.5 {
                    Flow::Stop
                } else {
                    Flow::Continue
                })
            },
        )
        .unwrap();
        let (t, _) = sol.stopped.unwrap();
        assert!(t > 0.69 && t < 5.0);
        assert!(sol.times.is_empty());
    }

    #[test]
    fn blow_up_reports_step_failure() {
        let r = solve(
            |_, y, dy| {
                dy[0] = y[0] * y[0];
                Ok(())
            },
            0.0,
            &[Complex64::new(1.0, 0.0)],
            &[2.0],
            &OdeOptions::default(),
            |_, _| Ok(Flow::Continue),
        );
        assert!(matches!(r, Err(Error::StepFailure { .. })));
    }
}
