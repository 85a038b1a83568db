//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the pipeline.
///
/// Row-level problems in input files are not errors: they are counted,
/// logged, and skipped. An `Error` means a whole operation cannot produce a
/// meaningful result.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    FileFormat { path: PathBuf, message: String },

    #[error("lexicon term {term:?} appears in both the positive and negative lists")]
    LexiconOverlap { term: String },

    #[error("lexicon has no {side} terms after trimming and deduplication")]
    LexiconEmpty { side: &'static str },

    #[error("design matrix is rank deficient; collinear columns: {}", columns.join(", "))]
    Collinear { columns: Vec<String> },

    #[error("instrument moment matrix is singular; {detail}")]
    SingularInstruments { detail: String },

    #[error("need at least {needed} {what}, found {found}")]
    Insufficient {
        what: &'static str,
        needed: usize,
        found: usize,
    },

    #[error("cannot median-split on {variable:?}: {reason}")]
    BadSplit { variable: String, reason: String },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    /// Wraps an IO error with the path it occurred on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Shorthand for a file-format error tied to a path.
    pub fn file_format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::FileFormat {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
