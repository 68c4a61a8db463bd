//! Error types shared across the crate.

use thiserror::Error;

/// Unified error type for parsing, validation, inference, and configuration.
#[derive(Debug, Error)]
pub enum GarError {
    /// A text input (event stream, ontology file, bank file) could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// An input value violated a documented bound or invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// An operation was called outside its domain (empty sequence, code out of
    /// range, weight parameter out of bounds, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A run configuration is internally inconsistent (layer vocabularies do
    /// not chain, incompatible architecture/policy combinations, ...).
    #[error("configuration error: {0}")]
    Config(String),
}

impl GarError {
    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        GarError::Parse {
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, GarError>;
