use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("branch error: Re(u[{index}]) = {re:e} > 0")]
    Branch { index: usize, re: f64 },

    #[error("unsupported Lévy measure: {0}")]
    Unsupported(String),

    #[error("unknown moment: {0}")]
    UnknownMoment(String),

    #[error("no first moment: {0}")]
    NoFirstMoment(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("not subcritical: max Re(eigenvalue) = {0:e}")]
    NotSubcritical(f64),

    #[error("ODE step failure at t = {t:e} (h = {h:e}): {context}")]
    StepFailure { t: f64, h: f64, context: String },

    #[error("invariant violation at t = {t:e}: Re(psi[{index}]) = {re:e}")]
    InvariantViolation { t: f64, index: usize, re: f64 },

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("truncation failure: |char| = {modulus:e} at u_max = {u_max:e}")]
    Truncation { u_max: f64, modulus: f64 },

    #[error("non-convergence: {0}")]
    NonConvergence(String),

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by bad user input rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidModel(_)
                | Error::InvalidArgument(_)
                | Error::Unsupported(_)
                | Error::UnknownMoment(_)
                | Error::NoFirstMoment(_)
                | Error::NotSubcritical(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
