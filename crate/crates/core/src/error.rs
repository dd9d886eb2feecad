use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input failed a structural or range check (bad dimensions, off-grid times, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// An argument fell outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A computation produced a non-finite value.
    #[error("numeric error in {block}: {message}")]
    Numeric { block: String, message: String },

    /// The likelihood failed on a particular subject.
    #[error("observation {index}: {source}")]
    Observation {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    /// The optimizer hit a non-finite objective; carries the last finite iterate.
    #[error("optimizer stopped at a non-finite objective after {iterations} iterations")]
    Optimizer {
        iterations: usize,
        last_good: Vec<f64>,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(block: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Numeric {
            block: block.into(),
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: msg.into(),
        }
    }

    /// True for failures of floating point arithmetic rather than of input.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Numeric { .. } | Error::Optimizer { .. } => true,
            Error::Observation { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Domain(_) | Error::Parse { .. } => 2,
            e if e.is_numeric() => 3,
            Error::Observation { .. } => 2,
            _ => 1,
        }
    }
}
