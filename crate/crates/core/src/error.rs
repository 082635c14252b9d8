use thiserror::Error;

use crate::mdp::{Action, State};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("position ({x},{y}) outside {width}x{height} grid")]
pub struct BoundsError {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Bounds(#[from] BoundsError),

    #[error("map format: {0}")]
    Format(String),

    #[error("map validation: {0}")]
    Validation(String),

    #[error("greedy policy did not reach the goal within {max_steps} steps after {episodes} episodes")]
    TrainingNotConverged { episodes: usize, max_steps: usize },

    #[error("no goal-reaching path from {start} within {max_steps} steps")]
    PathNotFound { start: State, max_steps: usize },

    #[error("experience log is empty")]
    EmptyExperience,

    #[error("no modeled transition for {state} under {action}")]
    UnmodeledTransition { state: State, action: Action },

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("path of length {0} is too short to extract subgoals")]
    InsufficientPath(usize),

    #[error("optimal policy not reached within {budget} episodes (seed {seed})")]
    BudgetExceeded { budget: usize, seed: u64 },

    #[error("no additional subgoal satisfies both selection requirements")]
    NoValidAddition,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
