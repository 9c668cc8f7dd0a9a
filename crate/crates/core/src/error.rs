use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid increment model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("drift {drift} outside the open support range ({lo}, {hi})")]
    Unsolvable { drift: f64, lo: f64, hi: f64 },

    #[error("endpoint unreachable: {0}")]
    Unreachable(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("state space too large: {size} exceeds limit {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
