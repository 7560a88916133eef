use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A single field-level validation failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn join_fields(fields: &[FieldError]) -> String {
    fields
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", join_fields(.0))]
    Config(Vec<FieldError>),

    #[error("index {index} out of range 1..={max}")]
    Bounds { index: u32, max: u32 },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("malformed log at trial {trial}: {message}")]
    MalformedLog { trial: usize, message: String },

    #[error("complete separation detected on column `{column}`")]
    Separation { column: String },

    #[error("information matrix is singular (rank deficient design)")]
    Rank,

    #[error("test undefined: {0}")]
    UndefinedTest(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config(vec![FieldError::new(field, message)])
    }

    /// Short machine-readable code, used for error JSON on the CLI and HTTP surfaces.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "invalid_config",
            Error::Bounds { .. } => "out_of_bounds",
            Error::Input(_) => "invalid_input",
            Error::Protocol(_) => "protocol_violation",
            Error::Numerical(_) => "numerical",
            Error::MalformedLog { .. } => "malformed_log",
            Error::Separation { .. } => "separation",
            Error::Rank => "rank_deficient",
            Error::UndefinedTest(_) => "undefined_test",
            Error::Parse { .. } => "parse_error",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
