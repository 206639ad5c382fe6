//! Discrete-event fluid simulation of stream applications on the fabric.

pub mod engine;
pub mod metrics;
pub mod workload;

pub use engine::{run, EpochTrace, RunOutput, SimConfig};
pub use metrics::{AppSummary, LatencySummary, LinkUtilization, Summary};
