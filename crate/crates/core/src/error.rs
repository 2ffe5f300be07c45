use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid sample: {0}")]
    InvalidSample(String),

    /// The sample has no observed events, so no statistic can be formed.
    #[error("sample has no observed events; nothing to test")]
    NoEvents,

    #[error("invalid contrast matrix: {0}")]
    InvalidContrast(String),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("unknown factor `{0}`")]
    UnknownFactor(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Mismatch(String),

    #[error("root finder did not converge after {iterations} iterations (target {target})")]
    RootFinding { iterations: usize, target: f64 },

    /// Malformed dataset file. `row` is the 1-based data row (header excluded).
    #[error("schema error at row {row}: {message}")]
    Schema { row: usize, message: String },

    #[error("schema error: {0}")]
    Header(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by a malformed input file.
    pub fn is_schema(&self) -> bool {
        matches!(self, Error::Schema { .. } | Error::Header(_) | Error::Csv(_))
    }
}
