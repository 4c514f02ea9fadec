//! Scenario runner for the relative-wealth portfolio game: configuration,
//! single runs, table suites and the invariant check.

pub mod check;
pub mod cli;
pub mod config;
pub mod output;
pub mod scenario;
pub mod table;

use relwealth_core::analytic::AnalyticError;
use relwealth_core::learn::LearnError;
use thiserror::Error;

pub use config::{validate_config, ConfigError, ScenarioConfig};
pub use scenario::{compute_scenario, run_scenario, ScenarioReport};
pub use table::{run_table, Suite};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o failure: {0}")]
    Io(String),
    #[error("{failed} of {total} table cells failed: {cells}")]
    PartialTable { failed: usize, total: usize, cells: String },
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numeric(_) | RunError::Io(_) => 3,
            RunError::PartialTable { .. } => 4,
        }
    }
}

impl From<LearnError> for RunError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::Io(s) => RunError::Io(s),
            e => RunError::Numeric(e.to_string()),
        }
    }
}

impl From<AnalyticError> for RunError {
    fn from(e: AnalyticError) -> Self {
        RunError::Numeric(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

impl From<csv::Error> for RunError {
    fn from(e: csv::Error) -> Self {
        RunError::Io(e.to_string())
    }
}
