use std::path::PathBuf;

/// Why a text input could not be parsed.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseErrorKind {
    #[error("malformed header: {0}")]
    Header(String),
    #[error("expected {expected} values, found {found}")]
    Count { expected: usize, found: usize },
    #[error("invalid number {0:?}")]
    Number(String),
    #[error("non-finite value {0:?}")]
    NonFinite(String),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: line {line}: {kind}")]
    Parse {
        path: PathBuf,
        line: usize,
        kind: ParseErrorKind,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: String, got: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing layer {0:?}")]
    MissingLayer(String),

    #[error("matrix not positive definite at pivot {pivot} (value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("index {index} out of range for dimension {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("newton iteration did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NotConverged {
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("model is not fitted")]
    Unfitted,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, kind: ParseErrorKind) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            kind,
        }
    }

    pub(crate) fn dims(expected: impl std::fmt::Display, got: impl std::fmt::Display) -> Self {
        Error::Dimension {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
