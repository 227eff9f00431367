//! Operator-facing harness: training, evaluation, demonstration tooling and
//! the live teleoperation service.

pub mod commands;
pub mod config;
pub mod teleop;

use std::process::ExitCode;

use retract_core::demos::DemoError;
use retract_core::nn::NnError;
use thiserror::Error;

/// Failures grouped by exit code: bad configuration, I/O trouble, and
/// contract violations (inconsistent files, diverging replays, failed
/// invariants).
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

impl CliError {
    pub const CONFIG_EXIT: u8 = 2;
    pub const IO_EXIT: u8 = 3;
    pub const CONTRACT_EXIT: u8 = 4;

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => Self::CONFIG_EXIT,
            CliError::Io(_) => Self::IO_EXIT,
            CliError::Contract(_) => Self::CONTRACT_EXIT,
        })
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<retract_core::kv::KvError> for CliError {
    fn from(e: retract_core::kv::KvError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DemoError> for CliError {
    fn from(e: DemoError) -> Self {
        match e {
            DemoError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Contract(other.to_string()),
        }
    }
}

impl From<retract_core::Error> for CliError {
    fn from(e: retract_core::Error) -> Self {
        use retract_core::Error as E;
        match e {
            E::Config(e) => e.into(),
            E::Io(e) => e.into(),
            E::Demo(e) => e.into(),
            E::Nn(NnError::Checkpoint(m)) => CliError::Contract(format!("unreadable checkpoint: {m}")),
            other => CliError::Contract(other.to_string()),
        }
    }
}

impl From<retract_core::ppo::TrainError> for CliError {
    fn from(e: retract_core::ppo::TrainError) -> Self {
        CliError::Contract(e.to_string())
    }
}
