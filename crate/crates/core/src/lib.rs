//! Flow-level simulation of distributed stream-analytics applications on a
//! datacenter fabric, with application-aware, max-min and multi-application
//! fair bandwidth allocators.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod app;
pub mod error;
pub mod fairness;
pub mod matrix;
pub mod profiler;
pub mod scenario;
pub mod sim;
pub mod topology;

pub use error::{Error, Result};
