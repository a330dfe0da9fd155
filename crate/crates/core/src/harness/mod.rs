//! Simulation driver, re-optimization baseline and verification oracles.

pub mod baseline;
pub mod config;
pub mod oracle;
pub mod random;
pub mod routes;
pub mod simulate;
pub mod trajectory;
pub mod verify;

use thiserror::Error;

use crate::controller::ControlError;
use crate::model::ModelError;
use crate::scenario::ScenarioError;
use crate::soft_solver::SolverError;

pub use baseline::{run_baseline, BaselineRecord, BaselineSummary};
pub use config::{Problem, RunConfig};
pub use simulate::{run_simulation, SimulationOptions, SimulationSummary};
pub use trajectory::TrajectoryRecord;
pub use verify::{verify_suite, PropertyResult, VerifyReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("I/O error: {0}")]
    Io(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("trajectory parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}
