use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GptcmError>;

#[derive(Debug, Error)]
pub enum GptcmError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid simplex: {0}")]
    InvalidSimplex(String),

    #[error("no sign change in bracket [{lo}, {hi}]: f(lo)={f_lo}, f(hi)={f_hi}")]
    NoSignChange { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("row {row}: {msg}")]
    InvalidRow { row: usize, msg: String },

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("non-finite log-likelihood term for subject {subject}")]
    NonFiniteLikelihood { subject: usize },

    #[error("all {starts} starts failed; first error: {first}")]
    AllStartsFailed { starts: usize, first: String },

    #[error("study aborted at n={n}: {failures} of {replications} fits failed")]
    StudyFailed {
        n: usize,
        failures: usize,
        replications: usize,
    },

    #[error("unsupported scheme: {0}")]
    UnsupportedScheme(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl GptcmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GptcmError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        GptcmError::Domain(msg.into())
    }
}
