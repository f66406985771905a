//! Error type shared across the engine.

use std::fmt;
use std::io;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensor, network, attack, training and data code.
#[derive(Debug)]
pub enum Error {
    /// Two tensors (or a tensor and an expected shape) cannot be combined.
    Dim {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A caller violated an operation's contract (bad index, empty input, ...).
    Contract(String),
    /// A file does not match its expected binary/textual format.
    Format(String),
    /// Two inputs that must agree (e.g. image and label counts) do not.
    Consistency(String),
    /// Underlying I/O failure.
    Io(io::Error),
    /// A configuration key is unknown, malformed, or violates a constraint.
    Config {
        key: String,
        line: Option<usize>,
        what: String,
    },
}

impl Error {
    pub fn contract(what: impl Into<String>) -> Self {
        Error::Contract(what.into())
    }

    pub fn format(what: impl Into<String>) -> Self {
        Error::Format(what.into())
    }

    pub fn consistency(what: impl Into<String>) -> Self {
        Error::Consistency(what.into())
    }

    pub fn config(key: impl Into<String>, what: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            line: None,
            what: what.into(),
        }
    }

    pub fn config_at(key: impl Into<String>, line: usize, what: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            line: Some(line),
            what: what.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dim { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} and {right:?}")
            }
            Error::Contract(what) => write!(f, "contract violation: {what}"),
            Error::Format(what) => write!(f, "format error: {what}"),
            Error::Consistency(what) => write!(f, "consistency error: {what}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Config {
                key,
                line: Some(line),
                what,
            } => write!(f, "config error at line {line}, key '{key}': {what}"),
            Error::Config {
                key,
                line: None,
                what,
            } => write!(f, "config error, key '{key}': {what}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}
