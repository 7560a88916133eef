use std::fmt;

use freezekit::Error as CoreError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Errors surfaced by the session service and the CLI.
#[derive(Debug)]
pub enum PlatformError {
    NotFound(String),
    UnknownPreset { name: String, presets: Vec<String> },
    BadRequest(String),
    Core(CoreError),
}

/// Wire form shared by the HTTP API and the CLI's stderr.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub details: Value,
}

impl PlatformError {
    pub fn code(&self) -> &'static str {
        match self {
            PlatformError::NotFound(_) => "not_found",
            PlatformError::UnknownPreset { .. } => "unknown_preset",
            PlatformError::BadRequest(_) => "bad_request",
            PlatformError::Core(e) => e.code(),
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            PlatformError::NotFound(_) => 404,
            PlatformError::UnknownPreset { .. } | PlatformError::BadRequest(_) => 400,
            PlatformError::Core(e) => match e {
                CoreError::Config(_) => 422,
                CoreError::Protocol(_) => 409,
                CoreError::Input(_) | CoreError::Bounds { .. } | CoreError::Parse { .. } => 400,
                _ => 500,
            },
        }
    }

    pub fn body(&self) -> ErrorBody {
        let details = match self {
            PlatformError::UnknownPreset { presets, .. } => json!({ "presets": presets }),
            PlatformError::Core(CoreError::Config(fields)) => json!({ "fields": fields }),
            PlatformError::Core(CoreError::Parse { line, .. }) => json!({ "line": line }),
            PlatformError::Core(CoreError::Bounds { index, max }) => json!({ "index": index, "max": max }),
            _ => Value::Null,
        };
        ErrorBody {
            code: self.code().into(),
            message: self.to_string(),
            details,
        }
    }
}

impl fmt::Display for PlatformError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlatformError::NotFound(id) => write!(f, "no session `{id}`"),
            PlatformError::UnknownPreset { name, presets } => {
                write!(f, "unknown preset `{name}`; available: {}", presets.join(", "))
            }
            PlatformError::BadRequest(m) => f.write_str(m),
            PlatformError::Core(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for PlatformError {}

impl From<CoreError> for PlatformError {
    fn from(e: CoreError) -> Self {
        PlatformError::Core(e)
    }
}

impl From<std::io::Error> for PlatformError {
    fn from(e: std::io::Error) -> Self {
        PlatformError::Core(CoreError::Io(e))
    }
}

pub type Result<T, E = PlatformError> = std::result::Result<T, E>;
