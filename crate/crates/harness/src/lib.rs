//! Experiment runner for the zkfl protocol stack: scenario files, paired-seed
//! runs, ablations, error reports and self-tests.

pub mod config;
pub mod experiments;
pub mod report;
pub mod selftest;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Protocol(#[from] zkfl::protocol::ProtocolError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Process exit status: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Protocol(zkfl::protocol::ProtocolError::Config(_)) => 2,
            _ => 1,
        }
    }
}
