use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate triangle (area {area:e} m^2)")]
    DegenerateTriangle { area: f64 },

    #[error("mesh line {line}: {msg}")]
    Mesh { line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("scenario parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },

    #[error("invalid scenario: {0}")]
    Invalid(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {index} out of range for {what} (len {len})")]
    OutOfRange { what: &'static str, index: usize, len: usize },

    #[error("search space too large: {states} states exceeds the {limit} limit; use clustered mode")]
    TooLarge { states: u128, limit: u128 },

    #[error("invalid TP partition: {0}")]
    Partition(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
