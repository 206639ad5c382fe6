//! Flow-state profiling: send/receive queue instrumentation reduced to the
//! five-metric interval tuple the allocator consumes.

use serde::Serialize;

use crate::error::{Error, Result};

/// Bytes per megabyte.
pub const MB: f64 = 1.0e6;

pub fn bytes_to_mb(bytes: u64) -> f64 {
    bytes as f64 / MB
}

/// Instantaneous endpoint backlogs, MB.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FlowQueues {
    pub send_backlog: f64,
    pub recv_backlog: f64,
}

/// Monotone byte counters kept per flow by the engine. Backlogs are exact
/// integer byte counts so the conservation identities hold without drift.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlowCounters {
    pub send_bytes: u64,
    pub recv_bytes: u64,
    pub generated: u64,
    pub delivered: u64,
    pub processed: u64,
}

impl FlowCounters {
    pub fn queues(&self) -> FlowQueues {
        FlowQueues { send_backlog: bytes_to_mb(self.send_bytes), recv_backlog: bytes_to_mb(self.recv_bytes) }
    }
}

/// Five-metric state of one flow over `(t, t + interval)`, all MB.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct FlowState {
    pub l_s_start: f64,
    pub l_r_start: f64,
    pub volume: f64,
    pub l_s_end: f64,
    pub l_r_end: f64,
    /// Seconds.
    pub interval: f64,
}

impl FlowState {
    pub fn idle(interval: f64) -> Self {
        FlowState { interval, ..Default::default() }
    }

    /// Data the sender must push next interval if its input speed holds:
    /// `V + 2 L_s(end) - L_s(start)`. May be non-positive.
    pub fn uplink_weight(&self) -> f64 {
        self.volume + 2.0 * self.l_s_end - self.l_s_start
    }

    /// Receiver processing rate `(V - L_r(end) + L_r(start)) / dt`, MB/s.
    pub fn processing_rate(&self) -> f64 {
        (self.volume - self.l_r_end + self.l_r_start) / self.interval
    }

    /// Rate that would carry last interval's transfer plus the queued backlog.
    pub fn demand(&self) -> f64 {
        (self.volume + self.l_s_end) / self.interval
    }
}

/// Extra interval bookkeeping used by conservation checks.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IntervalRecord {
    pub state: FlowState,
    /// MB enqueued at the sender during the interval.
    pub generated: f64,
    /// MB consumed by the receiver during the interval.
    pub processed: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalClock {
    pub t: f64,
    pub sample_period: f64,
    pub alloc_period: f64,
}

impl IntervalClock {
    pub fn new(sample_period: f64, alloc_period: f64) -> Result<Self> {
        if !(sample_period > 0.0 && alloc_period > 0.0) {
            return Err(Error::Validation(vec!["sample and allocation periods must be positive".into()]));
        }
        let ratio = alloc_period / sample_period;
        if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::Validation(vec![format!(
                "allocation period {alloc_period} s must be an integer multiple of the sample period {sample_period} s"
            )]));
        }
        Ok(IntervalClock { t: 0.0, sample_period, alloc_period })
    }

    pub fn samples_per_epoch(&self) -> usize {
        (self.alloc_period / self.sample_period).round() as usize
    }
}

/// Snapshots counters at allocation boundaries.
#[derive(Clone, Debug, Default)]
pub struct Profiler {
    start: Vec<FlowCounters>,
    started_at: f64,
}

impl Profiler {
    pub fn new(flow_count: usize) -> Self {
        Profiler { start: vec![FlowCounters::default(); flow_count], started_at: 0.0 }
    }

    /// Records starting backlogs; returns `(L_s, L_r)` per flow in MB.
    pub fn begin_interval(&mut self, counters: &[FlowCounters], t: f64) -> Vec<(f64, f64)> {
        self.start = counters.to_vec();
        self.started_at = t;
        counters
            .iter()
            .map(|c| {
                let q = c.queues();
                (q.send_backlog, q.recv_backlog)
            })
            .collect()
    }

    /// Closes the interval opened by the last `begin_interval`.
    pub fn end_interval(&self, counters: &[FlowCounters], t: f64) -> Vec<IntervalRecord> {
        let interval = t - self.started_at;
        self.start
            .iter()
            .zip(counters)
            .map(|(s, e)| IntervalRecord {
                state: FlowState {
                    l_s_start: bytes_to_mb(s.send_bytes),
                    l_r_start: bytes_to_mb(s.recv_bytes),
                    volume: bytes_to_mb(e.delivered - s.delivered),
                    l_s_end: bytes_to_mb(e.send_bytes),
                    l_r_end: bytes_to_mb(e.recv_bytes),
                    interval,
                },
                generated: bytes_to_mb(e.generated - s.generated),
                processed: bytes_to_mb(e.processed - s.processed),
            })
            .collect()
    }
}
