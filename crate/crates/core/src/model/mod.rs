//! Model parameters, admissibility checks and the immigration condition.

pub mod levy;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use levy::{
    Atom, CompiledLevy, Estimate, JumpAtom, JumpDistribution, LevyMeasureSpec, SamplerHandle,
    TemperingFn,
};

/// Parameters of `dX_k = (b_k + Σ_j β_kj X_j)dt + (σ_k X_k)^{1/α_k} dZ_k + dJ_k`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct ModelParams {
    pub b: Vec<f64>,
    pub beta: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub levy: LevyMeasureSpec,
}

/// On-disk layout: `beta` is stored as a list of rows.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub m: usize,
    pub b: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    pub alpha: Vec<f64>,
    #[serde(default = "zero_levy")]
    pub levy: LevyMeasureSpec,
}

fn zero_levy() -> LevyMeasureSpec {
    LevyMeasureSpec::Zero
}

impl TryFrom<ModelFile> for ModelParams {
    type Error = String;

    fn try_from(f: ModelFile) -> std::result::Result<Self, String> {
        let m = f.m;
        if m == 0 {
            return Err("m must be positive".into());
        }
        if f.beta.len() != m || f.beta.iter().any(|r| r.len() != m) {
            return Err(format!("beta must be {m}×{m}"));
        }
        for (name, v) in [("b", &f.b), ("sigma", &f.sigma), ("alpha", &f.alpha)] {
            if v.len() != m {
                return Err(format!("{name} has length {} (expected {m})", v.len()));
            }
        }
        Ok(ModelParams {
            b: f.b,
            beta: DMatrix::from_fn(m, m, |i, j| f.beta[i][j]),
            sigma: f.sigma,
            alpha: f.alpha,
            levy: f.levy,
        })
    }
}

impl From<ModelParams> for ModelFile {
    fn from(p: ModelParams) -> Self {
        let m = p.m();
        ModelFile {
            m,
            beta: (0..m)
                .map(|i| (0..m).map(|j| p.beta[(i, j)]).collect())
                .collect(),
            b: p.b,
            sigma: p.sigma,
            alpha: p.alpha,
            levy: p.levy,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    /// Breaks well-posedness of the SDE or of the numerics.
    Structural,
    /// Violates the standing assumption `σ_k > 0` only; degenerate `σ_k = 0`
    /// models remain computable and are used as test limits.
    Standing,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub message: String,
    pub severity: Severity,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<&str> {
        self.violations.iter().map(|v| v.message.as_str()).collect()
    }

    fn error_from(violations: Vec<&Violation>) -> Result<()> {
        if violations.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<_> = violations.iter().map(|v| v.message.clone()).collect();
            Err(Error::InvalidModel(msgs.join("; ")))
        }
    }

    /// Errors on any violation.
    pub fn into_result(&self) -> Result<()> {
        Self::error_from(self.violations.iter().collect())
    }

    /// Errors on structural violations only.
    pub fn structural(&self) -> Result<()> {
        Self::error_from(
            self.violations
                .iter()
                .filter(|v| v.severity == Severity::Structural)
                .collect(),
        )
    }
}

fn viol(message: String, severity: Severity) -> Violation {
    Violation { message, severity }
}

impl ModelParams {
    pub fn new(
        b: Vec<f64>,
        beta: DMatrix<f64>,
        sigma: Vec<f64>,
        alpha: Vec<f64>,
        levy: LevyMeasureSpec,
    ) -> Self {
        Self {
            b,
            beta,
            sigma,
            alpha,
            levy,
        }
    }

    /// Builds a model from row-major `beta` rows.
    pub fn from_rows(
        b: Vec<f64>,
        beta_rows: &[Vec<f64>],
        sigma: Vec<f64>,
        alpha: Vec<f64>,
        levy: LevyMeasureSpec,
    ) -> Result<Self> {
        let m = b.len();
        ModelParams::try_from(ModelFile {
            m,
            b,
            beta: beta_rows.to_vec(),
            sigma,
            alpha,
            levy,
        })
        .map_err(Error::InvalidModel)
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    /// Every violated admissibility constraint, with the offending index.
    pub fn validate(&self) -> ValidationReport {
        let m = self.m();
        let mut v = Vec::new();
        if m == 0 {
            v.push(viol("m must be positive".into(), Severity::Structural));
            return ValidationReport { violations: v };
        }
        if self.beta.nrows() != m || self.beta.ncols() != m {
            v.push(viol(format!("beta must be {m}×{m}"), Severity::Structural));
        }
        for (name, len) in [("sigma", self.sigma.len()), ("alpha", self.alpha.len())] {
            if len != m {
                v.push(viol(
                    format!("{name} has length {len} (expected {m})"),
                    Severity::Structural,
                ));
            }
        }
        if !v.is_empty() {
            return ValidationReport { violations: v };
        }
        for k in 0..m {
            if !(self.b[k] >= 0.0 && self.b[k].is_finite()) {
                v.push(viol(format!("b[{k}] < 0"), Severity::Structural));
            }
            if !(self.alpha[k] > 1.0 && self.alpha[k] < 2.0) {
                v.push(viol(
                    format!("alpha[{k}] not in (1,2)"),
                    Severity::Structural,
                ));
            }
            if !self.sigma[k].is_finite() || self.sigma[k] < 0.0 {
                v.push(viol(format!("sigma[{k}] < 0"), Severity::Structural));
            } else if self.sigma[k] == 0.0 {
                v.push(viol(
                    format!("sigma[{k}] = 0 (must be > 0)"),
                    Severity::Standing,
                ));
            }
            for j in 0..m {
                let x = self.beta[(k, j)];
                if !x.is_finite() {
                    v.push(viol(
                        format!("beta[{k}][{j}] is not finite"),
                        Severity::Structural,
                    ));
                } else if k != j && x < 0.0 {
                    v.push(viol(format!("beta[{k}][{j}] < 0"), Severity::Structural));
                }
            }
        }
        for msg in self.levy.violations(m) {
            v.push(viol(msg, Severity::Structural));
        }
        ValidationReport { violations: v }
    }

    pub fn compiled_levy(&self) -> CompiledLevy {
        self.levy.compile(self.m())
    }

    /// Same model with the off-diagonal drift removed.
    pub fn diagonal(&self) -> Self {
        let mut p = self.clone();
        let d = self.beta.diagonal();
        p.beta = DMatrix::from_diagonal(&d);
        p
    }
}

/// `b_k ξ + ∫ (1 − e^{−ξ z_k}) ν(dz)`.
pub fn immigration_functional(params: &ModelParams, k: usize, xi: f64) -> Result<Estimate> {
    if k >= params.m() {
        return Err(Error::InvalidArgument(format!(
            "coordinate {k} out of range"
        )));
    }
    if !(xi >= 0.0) {
        return Err(Error::InvalidArgument(format!("xi must be ≥ 0, got {xi}")));
    }
    let nu = params.compiled_levy().immigration(k, xi)?;
    Ok(Estimate {
        value: params.b[k] * xi + nu.value,
        std_err: nu.std_err,
    })
}

/// Tolerance on the fitted exponent when judging the immigration condition.
pub const SLOPE_TOLERANCE: f64 = 0.02;

#[derive(Clone, Debug, Serialize)]
pub struct ConditionACoordinate {
    pub k: usize,
    pub vartheta_fit: f64,
    pub c_fit: f64,
    pub m_used: f64,
    pub satisfied: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionAReport {
    pub coordinates: Vec<ConditionACoordinate>,
    pub overall: bool,
}

fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fits `log I_k(ξ) ≈ ϑ log ξ + log C` on the upper half of `xi_grid`.
///
/// `C_fit` is the largest constant with `I_k(ξ) ≥ C ξ^ϑ` on that half, and
/// `M_used` its smallest grid point.
pub fn check_condition_a(
    params: &ModelParams,
    xi_grid: &[f64],
    k: Option<usize>,
) -> Result<ConditionAReport> {
    params.validate().structural()?;
    if xi_grid.len() < 8 {
        return Err(Error::InvalidArgument(
            "xi_grid needs at least 8 points".into(),
        ));
    }
    if xi_grid.windows(2).any(|w| !(w[1] > w[0])) || xi_grid[0] <= 0.0 {
        return Err(Error::InvalidArgument(
            "xi_grid must be positive and increasing".into(),
        ));
    }
    if xi_grid[xi_grid.len() - 1] / xi_grid[0] < 100.0 {
        return Err(Error::InvalidArgument(
            "xi_grid must span at least two decades".into(),
        ));
    }
    let coords: Vec<usize> = match k {
        Some(k) if k < params.m() => vec![k],
        Some(k) => {
            return Err(Error::InvalidArgument(format!(
                "coordinate {k} out of range"
            )))
        }
        None => (0..params.m()).collect(),
    };
    let compiled = params.compiled_levy();
    let upper = &xi_grid[xi_grid.len() / 2..];
    let mut out = Vec::new();
    for k in coords {
        let vals: Vec<f64> = xi_grid
            .iter()
            .map(|&xi| Ok(params.b[k] * xi + compiled.immigration(k, xi)?.value))
            .collect::<Result<_>>()?;
        if vals.iter().all(|v| *v <= 0.0) {
            return Err(Error::DegenerateFit(format!(
                "immigration functional of coordinate {k} vanishes on the whole grid"
            )));
        }
        let upper_vals = &vals[xi_grid.len() / 2..];
        let (vartheta, c_fit) = if upper_vals.iter().any(|v| *v <= 0.0) {
            (f64::NEG_INFINITY, 0.0)
        } else {
            let lx: Vec<f64> = upper.iter().map(|x| x.ln()).collect();
            let ly: Vec<f64> = upper_vals.iter().map(|v| v.ln()).collect();
            let (slope, _) = least_squares(&lx, &ly);
            let c = upper
                .iter()
                .zip(upper_vals)
                .map(|(x, v)| v / x.powf(slope))
                .fold(f64::INFINITY, f64::min);
            (slope, c)
        };
        let satisfied = vartheta > params.alpha[k] - 1.0 - SLOPE_TOLERANCE && c_fit > 0.0;
        out.push(ConditionACoordinate {
            k,
            vartheta_fit: vartheta,
            c_fit,
            m_used: upper[0],
            satisfied,
        });
    }
    let overall = out.iter().all(|c| c.satisfied);
    Ok(ConditionAReport {
        coordinates: out,
        overall,
    })
}

/// Tolerance on the spectral abscissa for subcriticality.
pub const SUBCRITICAL_TOL: f64 = 1e-10;

/// Largest real part among the eigenvalues of `beta`.
pub fn spectral_abscissa(beta: &DMatrix<f64>) -> f64 {
    beta.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_subcritical(beta: &DMatrix<f64>) -> bool {
    beta.is_square() && spectral_abscissa(beta) < -SUBCRITICAL_TOL
}

pub fn log_moment_holds(levy: &LevyMeasureSpec) -> Result<bool> {
    levy.log_moment_holds()
}

/// `κ_i = min{1 + 1/α_max, 1/α_i + 1/α_i²}`, the Euler-approximation rate per coordinate.
pub fn euler_rates(alpha: &[f64]) -> Vec<f64> {
    let amax = alpha.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    alpha
        .iter()
        .map(|a| (1.0 + 1.0 / amax).min(1.0 / a + 1.0 / (a * a)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(alpha: f64, levy: LevyMeasureSpec) -> ModelParams {
        ModelParams::from_rows(vec![0.0], &[vec![-1.0]], vec![1.0], vec![alpha], levy).unwrap()
    }

    #[test]
    fn trivial_model_is_valid() {
        assert!(one_d(1.5, LevyMeasureSpec::Zero).validate().is_ok());
    }

    #[test]
    fn alpha_boundary_rejected() {
        let r = one_d(2.0, LevyMeasureSpec::Zero).validate();
        assert_eq!(r.messages(), vec!["alpha[0] not in (1,2)"]);
    }

    #[test]
    fn negative_off_diagonal_rejected() {
        let p = ModelParams::from_rows(
            vec![0.0, 0.0],
            &[vec![-1.0, -0.1], vec![0.0, -1.0]],
            vec![1.0, 1.0],
            vec![1.5, 1.5],
            LevyMeasureSpec::Zero,
        )
        .unwrap();
        assert_eq!(p.validate().messages(), vec!["beta[0][1] < 0"]);
    }

    #[test]
    fn zero_sigma_is_a_standing_violation_only() {
        let mut p = one_d(1.5, LevyMeasureSpec::Zero);
        p.sigma[0] = 0.0;
        let r = p.validate();
        assert!(!r.is_ok());
        assert!(r.structural().is_ok());
    }

    #[test]
    fn zero_measure_immigration_is_linear() {
        let p = ModelParams::from_rows(
            vec![2.0, 0.0],
            &[vec![-1.0, 0.0], vec![0.0, -1.0]],
            vec![1.0, 1.0],
            vec![1.5, 1.5],
            LevyMeasureSpec::Zero,
        )
        .unwrap();
        assert_eq!(immigration_functional(&p, 0, 3.0).unwrap().value, 6.0);
    }

    #[test]
    fn subcriticality_examples() {
        assert!(is_subcritical(&DMatrix::from_row_slice(
            2,
            2,
            &[-1.0, 0.0, 0.0, -2.0]
        )));
        assert!(!is_subcritical(&DMatrix::from_row_slice(1, 1, &[0.0])));
        assert!(!is_subcritical(&DMatrix::from_row_slice(
            2,
            2,
            &[-1.0, 2.0, 0.5, -1.0]
        )));
    }

    #[test]
    fn condition_a_zero_measure_is_degenerate() {
        let grid: Vec<f64> = (0..12).map(|i| 10f64.powf(i as f64 / 3.0)).collect();
        let r = check_condition_a(&one_d(1.5, LevyMeasureSpec::Zero), &grid, None);
        assert!(matches!(r, Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn rates_for_equal_indices() {
        let k = euler_rates(&[1.5, 1.5]);
        assert!((k[0] - 10.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn toml_layout() {
        let src = r#"
m = 2
b = [0.5, 0.5]
beta = [[-1.0, 0.2], [0.3, -1.5]]
sigma = [1.0, 1.0]
alpha = [1.3, 1.7]
[levy]
variant = "truncated"
radius = 5.0
[levy.inner]
variant = "coordinate_stable"
theta = [0.6, 0.6]
weight = [0.5, 0.5]
"#;
        let p: ModelParams = toml::from_str(src).unwrap();
        assert_eq!(p.beta[(0, 1)], 0.2);
        assert_eq!(p.beta[(1, 0)], 0.3);
        assert!(p.validate().is_ok());
        let back: ModelParams = toml::from_str(&toml::to_string(&p).unwrap()).unwrap();
        assert_eq!(back.beta, p.beta);
    }
}
