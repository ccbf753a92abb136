//! Batch front end: configuration, commands and artifact writers.

// `!(x > 0.0)` is how NaN gets rejected along with the rest.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod svg;

use std::fmt;

/// Failure of a command, mapped to the process exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Invalid or incomplete configuration; exit code 2.
    Config(String),
    /// Failure while computing; exit code 3.
    Runtime { op: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime { .. } => 3,
        }
    }

    pub fn runtime(op: &'static str, e: impl fmt::Display) -> CliError {
        CliError::Runtime {
            op,
            message: e.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime { op, message } => write!(f, "{op} failed: {message}"),
        }
    }
}

impl std::error::Error for CliError {}
