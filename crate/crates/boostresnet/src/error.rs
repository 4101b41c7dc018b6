//! Crate-wide error type.

use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Shape or argument mismatch (caller bug).
    Dimension(String),
    /// Non-finite values or other numerical breakdown.
    Numerical(String),
    /// An object was used in a state that violates its invariants.
    State(String),
    /// Malformed input file; `offset` is the byte position of the problem.
    Format { offset: u64, message: String },
    /// Invalid configuration; the message names the offending field.
    Config(String),
    /// The block-training oracle failed at a given boosting round.
    Oracle { round: usize, message: String },
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension error: {m}"),
            Error::Numerical(m) => write!(f, "numerical error: {m}"),
            Error::State(m) => write!(f, "state error: {m}"),
            Error::Format { offset, message } => {
                write!(f, "format error at byte {offset}: {message}")
            }
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Oracle { round, message } => {
                write!(f, "oracle failure at round {round}: {message}")
            }
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
