//! Hyperparameter search: tree-structured Parzen estimation, random search
//! and exhaustive grids over a shared [`SearchSpace`] description.
//!
//! All searches minimize. Objectives return `Result<f64, E>`; an error or a
//! non-finite value is recorded as a failed trial and the search goes on.

mod grid;
mod memory;
mod space;
mod tpe;
mod tune;

use thiserror::Error;

pub use grid::{grid_points, grid_search, grid_size, GridConfig};
pub use memory::{Trial, TrialMemory};
pub use space::{format_point, parse_point, Condition, Dimension, Domain, ParamValue, Point, SearchSpace};
pub use tpe::{optimize, random_search, suggest, Bandwidth, TpeConfig};
pub use tune::{tune_ensemble, tune_machine, EnsembleSpace, Method, TuneResult, TuneSettings};

use crate::data::DataError;
use crate::ensemble::EnsembleError;
use crate::machines::MachineError;

#[derive(Debug, Error)]
pub enum HpoError {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("objective value {0} is not finite")]
    NonFiniteObjective(f64),
    #[error("grid has {size} points, above the cap of {cap}")]
    GridTooLarge { size: usize, cap: usize },
    #[error("every trial failed")]
    NoValidTrial,
    #[error("objective failed: {0}")]
    Objective(String),
    #[error("bad trial file: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Result of a search: the best point, its value and every trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub best: Point,
    pub best_value: f64,
    pub memory: TrialMemory,
}

impl Outcome {
    pub(crate) fn from_memory(memory: TrialMemory) -> Result<Self, HpoError> {
        let best = memory.best().ok_or(HpoError::NoValidTrial)?;
        Ok(Self {
            best: best.params.clone(),
            best_value: best.objective,
            memory,
        })
    }
}
