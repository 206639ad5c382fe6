use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology parameter: {0}")]
    InvalidTopology(String),

    #[error("unknown machine id {0}")]
    UnknownMachine(usize),

    #[error("no route between a machine and itself (machine {0})")]
    SameMachine(usize),

    #[error("invalid application graph: {0}")]
    InvalidDag(String),

    #[error("application graph contains a cycle through operator `{0}`")]
    CyclicDag(String),

    #[error("global grouping target {target} out of range for `{operator}` (parallelism {parallelism})")]
    GlobalTargetOutOfRange { operator: String, target: usize, parallelism: usize },

    #[error("placement error: {0}")]
    Placement(String),

    #[error("solver requires at least one flow")]
    EmptyFlowSet,

    #[error("solver requires a positive capacity, got {0}")]
    NonPositiveCapacity(f64),

    #[error("flow {0} is missing from one side of the combination")]
    FlowMissing(usize),

    #[error("alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),

    #[error("jain index is undefined for an all-zero input")]
    AllZero,

    #[error("allocator produced a non-finite rate {rate} for flow {flow}")]
    NonFiniteRate { flow: usize, rate: f64 },

    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },

    #[error("scenario validation failed:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
