//! Support library for the `gar` binary: run configuration, the persisted
//! bank format, semantic-message construction, and trace rendering.

pub mod bankfile;
pub mod config;
pub mod explain;
pub mod message;

/// Exit 2: a problem with an input file (events, catalog, bank).
/// Exit 3: a problem with the run configuration.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> CliError {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> CliError {
        CliError {
            code: 3,
            message: message.into(),
        }
    }

    pub fn from_core(err: gar_core::GarError) -> CliError {
        match err {
            gar_core::GarError::Config(_) => CliError::config(err.to_string()),
            _ => CliError::input(err.to_string()),
        }
    }
}
