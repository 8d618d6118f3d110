use std::io;

use thiserror::Error;

pub type Result<T, E = StmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum StmError {
    /// Pixel index (or any other index) outside its valid range.
    #[error("index out of range: {0}")]
    Index(String),

    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two arguments do not agree (level, shape, channel count).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Malformed file contents. `at` is a line number for text formats and
    /// a byte offset for binary ones.
    #[error("parse error at {at}: {msg}")]
    Parse { at: Location, msg: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("empty evaluation set")]
    EmptyEvaluation,

    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Byte(usize),
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Line(l) => write!(f, "line {l}"),
            Location::Byte(b) => write!(f, "byte {b}"),
        }
    }
}

impl StmError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        StmError::Contract(msg.into())
    }

    pub(crate) fn parse_line(line: usize, msg: impl Into<String>) -> Self {
        StmError::Parse { at: Location::Line(line), msg: msg.into() }
    }

    pub(crate) fn parse_byte(offset: usize, msg: impl Into<String>) -> Self {
        StmError::Parse { at: Location::Byte(offset), msg: msg.into() }
    }
}
