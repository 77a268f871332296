use std::path::PathBuf;

/// Errors produced by the tone engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("invalid sampling coordinates: {0}")]
    InvalidCoordinates(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("unknown text {text:?}; available: {}", available.join(", "))]
    UnknownText { text: String, available: Vec<String> },

    #[error("key not found: {0:?}")]
    NotFound(String),

    #[error("degenerate direction vector (norm below {0:e})")]
    DegenerateDirection(f64),

    #[error("cannot normalize a zero-length vector")]
    Normalization,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("incompatible checkpoint: {0}")]
    Version(String),

    #[error("training failed at step {step}: {message}")]
    Training { step: u64, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            got,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
