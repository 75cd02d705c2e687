//! Orchestration behind the `qfeedback` binary: configuration loading,
//! the four subcommands and their CSV outputs.

pub mod commands;
pub mod config;
pub mod csvio;

use std::fmt;

pub use commands::{cmd_compare, cmd_rates, cmd_simulate, cmd_train};
pub use config::{ExperimentConfig, Overrides};

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(anyhow::Error),
    Io(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    /// Wraps a library error, keeping I/O problems apart from numerical ones.
    pub fn from_lib(context: impl fmt::Display, e: qfeedback::Error) -> Self {
        match e {
            qfeedback::Error::Io(io) => Failure::Io(anyhow::Error::new(io).context(context.to_string())),
            qfeedback::Error::InvalidParameter { .. } => Failure::Config(format!("{context}: {e}")),
            other => Failure::Numerical(anyhow::Error::new(other).context(context.to_string())),
        }
    }

    pub fn io(context: impl fmt::Display, e: impl Into<anyhow::Error>) -> Self {
        Failure::Io(e.into().context(context.to_string()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Numerical(e) => write!(f, "numerical failure: {e:#}"),
            Failure::Io(e) => write!(f, "I/O failure: {e:#}"),
        }
    }
}

impl std::error::Error for Failure {}
