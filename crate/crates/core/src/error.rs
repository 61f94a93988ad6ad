use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum KgError {
    #[error("design matrix is numerically singular (min |R_ii| = {min_diag:e}, max |R_ii| = {max_diag:e})")]
    SingularDesign { min_diag: f64, max_diag: f64 },

    #[error("degenerate contrast: {0}")]
    DegenerateContrast(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("knot vector invalid: {0}")]
    KnotOrder(String),

    #[error("s(x) is not positive on [0, d]: minimum {min_value} at x = {at}")]
    NonPositiveS { min_value: f64, at: f64 },

    #[error("quadrature budget exceeded: {0}")]
    QuadratureBudgetExceeded(String),

    #[error("root not bracketed on [{lo}, {hi}]")]
    RootNotBracketed { lo: f64, hi: f64 },

    #[error("optimization infeasible: {0}")]
    Infeasible(String),

    #[error("linear subproblem failed: {0}")]
    Subproblem(String),
}

pub type Result<T> = std::result::Result<T, KgError>;
