use thiserror::Error;

/// Errors produced by the library.
///
/// Variants are grouped so callers (notably the CLI) can distinguish
/// invalid inputs, numeric failures and I/O problems.
#[derive(Debug, Error)]
pub enum GngarchError {
    /// Invalid argument, configuration or domain-constraint violation.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Matrix/vector shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Not enough lagged observations to evaluate the recursion.
    #[error("insufficient history: need {needed} lagged values, have {got}")]
    InsufficientHistory { needed: usize, got: usize },

    /// Simulation path exceeded the divergence threshold.
    #[error("divergence at t={time}: |X[{node}]| = {value:.3e} exceeds threshold")]
    Divergence { time: usize, node: usize, value: f64 },

    /// A numeric quantity became NaN/inf or a factorization failed.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GngarchError>;
