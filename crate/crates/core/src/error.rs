use thiserror::Error;

/// Errors surfaced by the deconvolution library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data (labels, shapes, file content).
    #[error("data error: {0}")]
    Data(String),

    /// A solution collapsed to something that cannot be normalized
    /// (all-zero or negative concentration column).
    #[error("degenerate solution: {0}")]
    Degenerate(String),

    /// The normal equations are numerically singular.
    #[error("ill-conditioned system (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    /// Every gene was removed by a filter; no design rows remain.
    #[error("empty basis: {0}")]
    EmptyBasis(String),

    /// Correlation of a zero-variance (or all-tied) vector is undefined.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// Iterative solver ran out of iterations. Carries the best iterate
    /// found so callers can degrade gracefully.
    #[error("solver did not converge within {iterations} iterations (best objective {best_objective:.6e})")]
    NonConvergence {
        iterations: usize,
        best_objective: f64,
        best_coefficients: Vec<f64>,
    },

    /// A precondition on operation inputs was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
