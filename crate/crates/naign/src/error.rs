use thiserror::Error;

/// Crate-wide error type. Validation failures carry the offending field
/// or argument by name so CLI callers can surface it verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("config field `{field}`: {msg}")]
    Config { field: &'static str, msg: String },

    #[error("non-finite loss at step {step}; last good checkpoint retained")]
    NonFiniteLoss { step: u64 },

    #[error("non-finite gradient at step {step}; step skipped")]
    NonFiniteGradient { step: u64 },

    #[error("eigensolver did not converge within {0} sweeps")]
    NoConvergence(usize),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
