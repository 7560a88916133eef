//! Persistence, the live session service and its HTTP API.

pub mod api;
pub mod error;
pub mod service;
pub mod store;

pub use error::{ErrorBody, PlatformError, Result};
