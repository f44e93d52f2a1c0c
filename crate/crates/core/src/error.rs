use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: {0}")]
    Index(String),

    #[error("empty consideration set")]
    EmptyConsiderationSet,

    #[error("invalid probability {value} for {what}")]
    InvalidProbability { what: String, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dataset failed validation with {count} violation(s); first: {first}")]
    Validation { count: usize, first: String },

    #[error("enumeration limited to J <= {limit}, got J = {j}")]
    EnumerationGuard { j: usize, limit: usize },

    #[error("numerical failure at iteration {iter}: {msg}")]
    Numerical { iter: u64, msg: String },

    #[error("matrix is not symmetric positive-definite: {0}")]
    NotSpd(String),

    #[error("no admissible mixture component for subject {0}")]
    NoAdmissibleComponent(usize),

    #[error("unknown subject id {0}")]
    UnknownSubject(u64),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
