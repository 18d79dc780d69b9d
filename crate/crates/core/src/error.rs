use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input: bad sizes, unsupported values, schema violations.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numeric precondition does not hold (a parameter leaves the
    /// admissible region, a guard inequality fails, ...).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// `I - C(theta)` has a non-positive eigenvalue, so it does not define
    /// a Gaussian precision matrix.
    #[error("I - C(theta) is not positive definite (min eigenvalue {min_eigenvalue:.6e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    /// A dense-oracle routine was asked for a grid larger than its limit.
    #[error("dense path limited to p <= {limit}, got p = {p}")]
    DenseLimit { p: usize, limit: usize },

    #[error("matrix is not symmetric: max |B - B^T| entry is {max_gap:.3e}")]
    NotSymmetric { max_gap: f64 },

    #[error("matrix is not block circulant: max block mismatch is {max_gap:.3e}")]
    NotBlockCirculant { max_gap: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
