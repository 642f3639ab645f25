use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value encountered")]
    NonFinite,
    #[error("matrix is not symmetric (deviation {deviation:.3e})")]
    NotSymmetric { deviation: f64 },
    #[error("invalid population structure: {0}")]
    InvalidStructure(String),
    #[error("state violates simplex constraints: {0}")]
    InvalidState(String),
    #[error("payoff state outside admissible domain: {0}")]
    InadmissibleState(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("numerical integration aborted: {0}")]
    IntegrationAborted(String),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
