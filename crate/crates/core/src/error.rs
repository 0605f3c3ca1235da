use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("write error for {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate patch: {0}")]
    DegeneratePatch(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("state error: {0}")]
    State(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("training error: {0}")]
    Training(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Stable one-word class name, used as a diagnostic prefix by the CLI.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::EmptyInput(_) => "empty-input",
            Error::Write { .. } => "write",
            Error::Read { .. } => "file",
            Error::InvalidArgument(_) => "argument",
            Error::DegeneratePatch(_) => "degenerate-patch",
            Error::DegenerateGeometry(_) => "degenerate-geometry",
            Error::Shape(_) => "shape",
            Error::Numeric(_) => "numeric",
            Error::State(_) => "state",
            Error::Format(_) => "format",
            Error::Training(_) => "training",
        }
    }
}
