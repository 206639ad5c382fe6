//! Multi-application fairness: throughput history, priority grouping of
//! applications, strict-priority link scheduling and the Jain index.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::allocator::maxmin::water_fill;
use crate::app::FlowId;
use crate::error::{Error, Result};

pub type AppId = usize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AppThroughputRecord {
    pub app: AppId,
    /// Mean throughput over all intervals before the latest one, MB/s.
    pub mu_cum: f64,
    pub mu_recent: f64,
    pub mu_ewma: f64,
    /// Sum of every observed interval throughput, MB/s.
    total: f64,
    intervals: u64,
}

impl AppThroughputRecord {
    pub fn new(app: AppId) -> Self {
        AppThroughputRecord { app, mu_cum: 0.0, mu_recent: 0.0, mu_ewma: 0.0, total: 0.0, intervals: 0 }
    }

    /// A record whose history is `intervals` observations averaging `mean`.
    pub fn with_history(app: AppId, mean: f64, intervals: u64) -> Self {
        AppThroughputRecord { mu_cum: mean, total: mean * intervals as f64, intervals, ..Self::new(app) }
    }
}

/// Blends history with the latest interval:
/// `mu_ewma = alpha * mu_cum + (1 - alpha) * mu_recent`.
/// With no history the recent value stands in for it.
pub fn ewma_update(record: &AppThroughputRecord, mu_recent: f64, alpha: f64) -> Result<AppThroughputRecord> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    let mu_cum = if record.intervals == 0 { mu_recent } else { record.total / record.intervals as f64 };
    Ok(AppThroughputRecord {
        app: record.app,
        mu_cum,
        mu_recent,
        mu_ewma: alpha * mu_cum + (1.0 - alpha) * mu_recent,
        total: record.total + mu_recent,
        intervals: record.intervals + 1,
    })
}

/// Applications split into priority queues; index 0 is served first.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PriorityGroups {
    pub queues: Vec<Vec<AppId>>,
}

impl PriorityGroups {
    pub fn group_of(&self, app: AppId) -> Option<usize> {
        self.queues.iter().position(|q| q.contains(&app))
    }
}

/// Sorts applications by EWMA throughput, lowest first, and cuts the order
/// into at most `m` contiguous queues of `ceil(n / m)` apps.
pub fn group_apps(records: &[AppThroughputRecord], m: usize) -> PriorityGroups {
    if records.is_empty() {
        return PriorityGroups::default();
    }
    let mut order: Vec<&AppThroughputRecord> = records.iter().collect();
    order.sort_by(|a, b| a.mu_ewma.total_cmp(&b.mu_ewma).then(a.app.cmp(&b.app)));
    let size = records.len().div_ceil(m.max(1));
    PriorityGroups { queues: order.chunks(size).map(|c| c.iter().map(|r| r.app).collect()).collect() }
}

/// Moves every app starved for at least `threshold` intervals one queue up.
pub fn rotate_for_starvation(
    groups: &PriorityGroups,
    starved: &BTreeMap<AppId, u32>,
    threshold: u32,
) -> PriorityGroups {
    let mut out = groups.clone();
    for (i, queue) in groups.queues.iter().enumerate().skip(1) {
        for app in queue {
            if starved.get(app).copied().unwrap_or(0) >= threshold {
                out.queues[i].retain(|a| a != app);
                out.queues[i - 1].push(*app);
            }
        }
    }
    out.queues.retain(|q| !q.is_empty());
    out
}

/// A flow competing for one link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkClaim {
    pub flow: FlowId,
    pub app: AppId,
    /// MB/s; may be infinite.
    pub demand: f64,
}

/// Strict priority across queues; within a queue apps share max-min, and
/// each app's share is split max-min among its flows on the link. Apps in
/// no queue are served last.
pub fn schedule_link(capacity: f64, claims: &[LinkClaim], groups: &PriorityGroups) -> BTreeMap<FlowId, f64> {
    let mut out: BTreeMap<FlowId, f64> = claims.iter().map(|c| (c.flow, 0.0)).collect();
    let mut tiers: Vec<Vec<AppId>> = groups.queues.clone();
    let mut stray: Vec<AppId> = claims.iter().map(|c| c.app).filter(|a| groups.group_of(*a).is_none()).collect();
    stray.sort_unstable();
    stray.dedup();
    tiers.push(stray);

    let mut left = capacity.max(0.0);
    for tier in tiers {
        let apps: Vec<AppId> = tier.into_iter().filter(|a| claims.iter().any(|c| c.app == *a)).collect();
        if apps.is_empty() || left <= 0.0 {
            continue;
        }
        let app_demand: Vec<f64> =
            apps.iter().map(|a| claims.iter().filter(|c| c.app == *a).map(|c| c.demand).sum()).collect();
        let app_share = water_fill(left, &app_demand);
        for (a, share) in apps.iter().zip(&app_share) {
            let mine: Vec<&LinkClaim> = claims.iter().filter(|c| c.app == *a).collect();
            let flow_demand: Vec<f64> = mine.iter().map(|c| c.demand).collect();
            for (c, s) in mine.iter().zip(water_fill(*share, &flow_demand)) {
                out.insert(c.flow, s);
            }
        }
        left -= app_share.iter().sum::<f64>();
    }
    out
}

/// `(sum x)^2 / (n sum x^2)`, in `[1/n, 1]`.
pub fn jain_index(values: &[f64]) -> Result<f64> {
    let sq: f64 = values.iter().map(|v| v * v).sum();
    if values.is_empty() || sq == 0.0 {
        return Err(Error::AllZero);
    }
    let s: f64 = values.iter().sum();
    Ok(s * s / (values.len() as f64 * sq))
}
