use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("degenerate shape: {0}")]
    DegenerateShape(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("cache consistency: {0}")]
    CacheMismatch(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("adjoint mismatch: <Ax, y> = {lhs}, <x, A^T y> = {rhs}")]
    AdjointMismatch { lhs: f64, rhs: f64 },

    #[error("size limit exceeded: {0}")]
    Size(String),

    #[error("unsupported stage: {0}")]
    UnsupportedStage(String),

    #[error("empty sample: {0}")]
    EmptySample(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("training diverged at step {step}: {what}")]
    Divergence { step: u64, what: String },

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics rather than by inputs or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::InvalidValue(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
