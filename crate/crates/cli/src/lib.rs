//! Library surface of the command-line tool: file formats, run
//! configuration, and the experiment pipeline. The `unmix` binary is a
//! thin wrapper over these.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod tsv;

use std::fmt;

use unmix_core::Error;

/// Error carrying the process exit category: 1 usage, 2 data format,
/// 3 solver failure.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn solver(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }

    pub fn from_core(error: Error) -> Self {
        match error {
            Error::InvalidInput(_) => CliError::usage(error.to_string()),
            Error::NonConvergence { .. } | Error::IllConditioned { .. } | Error::Degenerate(_) => {
                CliError::solver(error.to_string())
            }
            _ => CliError::data(error.to_string()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

