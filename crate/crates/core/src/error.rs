use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("malformed data at line {line}: {message}")]
    MalformedData { line: usize, message: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("singular normal equations: design condition number {condition:e} exceeds 1e12")]
    Singular { condition: f64 },

    #[error("numeric overflow: {0}")]
    Overflow(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{failed} of {total} replications failed at n = {n}; more than 5% aborts the experiment")]
    TooManyFailures { n: usize, failed: usize, total: usize },

    #[error("input too large for the quadratic-cost path: n = {n} exceeds {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
