use thiserror::Error;

/// Errors produced by channel validation, simulation, and estimation.
#[derive(Debug, Error)]
pub enum Error {
    /// Structural validation failed (bad dimensions, non-finite entries,
    /// parameters out of range, malformed configs).
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A Choi matrix has a negative eigenvalue beyond tolerance.
    #[error("not completely positive: Choi eigenvalue {0} below -1e-10")]
    NotCompletelyPositive(f64),

    /// The channel has no Kraus operator close to the identity.
    #[error("no dominant Kraus operator: largest Choi eigenvalue {0} < 0.5")]
    NoDominantKraus(f64),

    /// Polar decomposition failed because the Hermitian factor is singular.
    #[error("channel too far from identity: polar factor singular (min singular value {0:.3e})")]
    TooFarFromIdentity(f64),

    /// Brute-force oracle asked to build a state beyond its size cap.
    #[error("problem size {size} exceeds brute-force cap {cap}")]
    SizeCap { size: usize, cap: usize },

    /// Transfer-product arithmetic produced a value outside physical range.
    #[error("internal consistency error: {0}")]
    Consistency(String),

    /// A twirl was requested for a gate outside the Clifford group.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("config error ({field}): {message}")]
    Config { field: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
