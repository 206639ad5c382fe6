//! Bandwidth allocators. Every policy turns the measured flow states at an
//! epoch boundary into per-flow rate limits for the next epoch.

pub mod bottleneck;
pub mod maxmin;
pub mod solvers;
pub mod step;

use std::collections::BTreeMap;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::app::{Flow, LinkFlowSets};
use crate::error::Result;
use crate::fairness::{
    ewma_update, group_apps, rotate_for_starvation, schedule_link, AppId, AppThroughputRecord, LinkClaim,
    PriorityGroups,
};
use crate::topology::LinkId;

pub use bottleneck::{detect_bottlenecks, BottleneckSets};
pub use maxmin::{maxmin_baseline, water_fill};
pub use solvers::{backfill, combine_min, scale_internal, scale_links, solve_downlink, solve_uplink};
pub use step::{allocate_step, demand_proxy, EpochInput};

/// Floor for uplink weights, MB.
pub const EPS_W: f64 = 1e-3;
/// Floor for processing rates and demand proxies, MB/s.
pub const EPS_P: f64 = 1e-3;

/// Per-flow rate limits, MB/s, indexed by flow id. Internal flows carry 0
/// and are not rate limited.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AllocationVector {
    pub rates: Vec<f64>,
    /// Time the allocation takes effect, seconds.
    pub epoch: f64,
}

/// Links whose summed allocation exceeds allocatable capacity.
pub fn violations(sets: &LinkFlowSets, capacities: &[f64], rates: &[f64]) -> Vec<LinkId> {
    sets.iter()
        .filter(|(l, m)| {
            let cap = capacities[l.0];
            m.iter().map(|f| rates[f.0]).sum::<f64>() > cap + 1e-9 * cap.max(1.0)
        })
        .map(|(l, _)| l)
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Decision {
    pub allocation: AllocationVector,
    pub bottlenecks: BottleneckSets,
    pub groups: Option<PriorityGroups>,
}

pub trait Allocator: Send {
    fn name(&self) -> &'static str;

    /// Rates before any measurement: max-min with unbounded demand.
    fn initial(&mut self, flows: &[Flow], sets: &LinkFlowSets, capacities: &[f64]) -> AllocationVector {
        let demands = vec![f64::INFINITY; flows.len()];
        AllocationVector { rates: maxmin_baseline(flows, sets, capacities, &demands), epoch: 0.0 }
    }

    fn decide(&mut self, input: &EpochInput) -> Result<Decision>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AllocatorChoice {
    #[value(alias = "app_aware")]
    AppAware,
    #[value(alias = "maxmin_tcp")]
    MaxminTcp,
    #[value(alias = "app_fair")]
    AppFair,
}

impl AllocatorChoice {
    pub fn label(self) -> &'static str {
        match self {
            AllocatorChoice::AppAware => "app_aware",
            AllocatorChoice::MaxminTcp => "maxmin_tcp",
            AllocatorChoice::AppFair => "app_fair",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairnessConfig {
    pub alpha: f64,
    /// Number of priority queues.
    pub m: usize,
    /// Seconds between regroupings.
    pub regroup_period: f64,
    /// Zero-throughput epochs before an app is promoted.
    pub starvation_threshold: u32,
}

impl Default for FairnessConfig {
    fn default() -> Self {
        FairnessConfig { alpha: 0.5, m: 2, regroup_period: 5.0, starvation_threshold: 3 }
    }
}

pub fn build(choice: AllocatorChoice, fairness: FairnessConfig, app_count: usize) -> Box<dyn Allocator> {
    match choice {
        AllocatorChoice::AppAware => Box::new(AppAware),
        AllocatorChoice::MaxminTcp => Box::new(MaxminTcp),
        AllocatorChoice::AppFair => Box::new(AppFair::new(fairness, app_count)),
    }
}

pub struct AppAware;

impl Allocator for AppAware {
    fn name(&self) -> &'static str {
        "app_aware"
    }

    fn decide(&mut self, input: &EpochInput) -> Result<Decision> {
        let (allocation, bottlenecks) = allocate_step(input)?;
        Ok(Decision { allocation, bottlenecks, groups: None })
    }
}

/// Per-flow max-min fairness standing in for converged TCP: demand-capped
/// max-min, then whatever is left is shared max-min again without caps.
pub struct MaxminTcp;

impl Allocator for MaxminTcp {
    fn name(&self) -> &'static str {
        "maxmin_tcp"
    }

    fn decide(&mut self, input: &EpochInput) -> Result<Decision> {
        let EpochInput { flows, sets, states, capacities, prior, .. } = *input;
        let demands: Vec<f64> = states.iter().map(demand_proxy).collect();
        let first = maxmin_baseline(flows, sets, capacities, &demands);
        let rates = fill_leftover(flows, sets, capacities, first);
        Ok(Decision {
            allocation: AllocationVector { rates, epoch: input.t },
            bottlenecks: detect_bottlenecks(sets, states, capacities, prior),
            groups: None,
        })
    }
}

fn fill_leftover(flows: &[Flow], sets: &LinkFlowSets, capacities: &[f64], base: Vec<f64>) -> Vec<f64> {
    let residual: Vec<f64> =
        sets.iter().map(|(l, m)| (capacities[l.0] - m.iter().map(|f| base[f.0]).sum::<f64>()).max(0.0)).collect();
    let extra = maxmin_baseline(flows, sets, &residual, &vec![f64::INFINITY; flows.len()]);
    base.iter().zip(extra).map(|(a, b)| a + b).collect()
}

/// Strict-priority multi-app scheduler: apps with the lowest smoothed
/// throughput are served first on every link.
pub struct AppFair {
    config: FairnessConfig,
    records: Vec<AppThroughputRecord>,
    groups: PriorityGroups,
    starved: BTreeMap<AppId, u32>,
    last_regroup: Option<f64>,
}

impl AppFair {
    pub fn new(config: FairnessConfig, app_count: usize) -> Self {
        AppFair {
            config,
            records: (0..app_count).map(AppThroughputRecord::new).collect(),
            groups: PriorityGroups { queues: vec![(0..app_count).collect()] },
            starved: BTreeMap::new(),
            last_regroup: None,
        }
    }

    pub fn records(&self) -> &[AppThroughputRecord] {
        &self.records
    }
}

impl Allocator for AppFair {
    fn name(&self) -> &'static str {
        "app_fair"
    }

    fn decide(&mut self, input: &EpochInput) -> Result<Decision> {
        let EpochInput { flows, sets, states, capacities, prior, t, dt } = *input;
        let mut recent = vec![0.0; self.records.len()];
        for f in flows {
            recent[f.app] += states[f.id.0].volume / dt;
        }
        for (rec, mu) in self.records.iter_mut().zip(&recent) {
            *rec = ewma_update(rec, *mu, self.config.alpha)?;
            let n = self.starved.entry(rec.app).or_insert(0);
            *n = if *mu > 0.0 { 0 } else { *n + 1 };
        }
        let due = self.last_regroup.is_none_or(|last| t - last >= self.config.regroup_period - 1e-9);
        if due {
            self.groups = group_apps(&self.records, self.config.m);
            self.last_regroup = Some(t);
        }
        self.groups = rotate_for_starvation(&self.groups, &self.starved, self.config.starvation_threshold);

        let mut capped: Vec<f64> = flows.iter().map(|f| if f.is_internal { 0.0 } else { f64::INFINITY }).collect();
        for (link, members) in sets.iter() {
            if members.is_empty() {
                continue;
            }
            let claims: Vec<LinkClaim> = members
                .iter()
                .map(|f| LinkClaim { flow: *f, app: flows[f.0].app, demand: demand_proxy(&states[f.0]) })
                .collect();
            for (f, r) in schedule_link(capacities[link.0], &claims, &self.groups) {
                capped[f.0] = capped[f.0].min(r);
            }
        }
        let rates = backfill(&capped, sets, capacities, flows, |_| true);
        Ok(Decision {
            allocation: AllocationVector { rates, epoch: t },
            bottlenecks: detect_bottlenecks(sets, states, capacities, prior),
            groups: Some(self.groups.clone()),
        })
    }
}
