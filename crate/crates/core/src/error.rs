//! Crate-wide error type and the exit-code mapping used by the CLI.

use std::path::PathBuf;

use thiserror::Error;

/// Errors returned by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violated an operation's contract.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter {
        /// Name of the offending parameter.
        name: &'static str,
        /// Why the value was rejected.
        reason: String,
    },

    /// Array dimensions did not line up.
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        /// Operation that detected the mismatch.
        context: &'static str,
        /// Expected dimensions.
        expected: Vec<usize>,
        /// Actual dimensions.
        actual: Vec<usize>,
    },

    /// A computation produced or received non-finite values.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A run configuration was incomplete or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A structured input file could not be parsed.
    #[error("parse error in {path} at line {line}: {reason}")]
    Parse {
        /// File being parsed.
        path: String,
        /// 1-indexed offending line.
        line: usize,
        /// What went wrong.
        reason: String,
    },

    /// Forecast records did not match the dataset they were evaluated against.
    #[error("misaligned inputs: {0}")]
    Alignment(String),

    /// Filesystem failure.
    #[error("i/o error on {path}: {source}")]
    Io {
        /// Path involved in the failed operation.
        path: PathBuf,
        /// Underlying error.
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 for configuration and input
    /// problems, 1 for runtime and numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter { .. } | Error::Config(_) | Error::Parse { .. } => 2,
            Error::Shape { .. } | Error::Numeric(_) | Error::Alignment(_) | Error::Io { .. } => 1,
        }
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
