//! Run-time recording and the end-of-run summary.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use crate::allocator::BottleneckSets;
use crate::app::LinkFlowSets;
use crate::fairness::{jain_index, PriorityGroups};
use crate::profiler::{FlowCounters, FlowState, MB};
use crate::scenario::Scenario;
use crate::topology::{LinkId, Topology};

use super::engine::{used_links, violation_split, SimConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencySummary {
    pub samples: usize,
    pub mean: f64,
    pub p50: f64,
    pub p99: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AppSummary {
    pub name: String,
    /// Sink tuples per second, mean over post-warm-up samples.
    pub throughput: f64,
    pub created: u64,
    pub consumed: u64,
    pub resident: u64,
    pub conserved: bool,
    /// Longest run of post-warm-up epochs with no sink completion.
    pub longest_zero_epochs: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkUtilization {
    pub link: usize,
    pub label: String,
    pub utilization: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub allocator: String,
    pub capacity_mbps: Option<f64>,
    pub config: SimConfig,
    /// Total sink tuples per second across apps.
    pub throughput: f64,
    pub apps: Vec<AppSummary>,
    pub latency: Option<LatencySummary>,
    /// Mean utilization of links flagged as bottlenecks after warm-up;
    /// absent when no link was flagged.
    pub utilization: Option<f64>,
    pub bottleneck_links: Vec<LinkUtilization>,
    pub jain: Option<f64>,
    pub epochs: usize,
    pub allocation_violations: usize,
    pub internal_violations: usize,
    pub coupling_violations: usize,
    pub identity_failures: usize,
    pub conservation_ok: bool,
}

pub(crate) struct Csvs {
    pub flow_states: String,
    pub allocations: String,
    pub samples: String,
    pub groups: Option<String>,
}

pub(crate) struct Recorder {
    scenario: String,
    capacity_mbps: Option<f64>,
    cfg: SimConfig,
    app_names: Vec<String>,
    warmup_end: f64,
    samples_per_epoch: usize,
    sample_index: usize,
    links: Vec<LinkId>,
    pub created: Vec<u64>,
    pub consumed: Vec<u64>,
    sink_now: Vec<u64>,
    sink_epoch: Vec<u64>,
    zero_streak: Vec<u32>,
    longest_zero: Vec<u32>,
    latencies: Vec<f64>,
    app_samples: Vec<Vec<f64>>,
    link_samples: Vec<Vec<f64>>,
    flagged: BTreeSet<LinkId>,
    epochs: usize,
    allocation_violations: usize,
    internal_violations: usize,
    coupling_violations: usize,
    identity_failures: usize,
    csv: Csvs,
}

impl Recorder {
    pub fn new(
        scenario: &Scenario,
        capacity_mbps: Option<f64>,
        cfg: &SimConfig,
        app_names: &[String],
        topology: &Topology,
        sets: &LinkFlowSets,
    ) -> Self {
        let n = app_names.len();
        Recorder {
            scenario: scenario.name.clone(),
            capacity_mbps,
            cfg: cfg.clone(),
            app_names: app_names.to_vec(),
            warmup_end: cfg.warmup_epochs as f64 * cfg.delta_t,
            samples_per_epoch: (cfg.delta_t / cfg.sample_period).round() as usize,
            sample_index: 0,
            links: used_links(sets),
            created: vec![0; n],
            consumed: vec![0; n],
            sink_now: vec![0; n],
            sink_epoch: vec![0; n],
            zero_streak: vec![0; n],
            longest_zero: vec![0; n],
            latencies: Vec::new(),
            app_samples: vec![Vec::new(); n],
            link_samples: vec![Vec::new(); topology.links().len()],
            flagged: BTreeSet::new(),
            epochs: 0,
            allocation_violations: 0,
            internal_violations: 0,
            coupling_violations: 0,
            identity_failures: 0,
            csv: Csvs {
                flow_states: "t,flow_id,l_s_start,l_r_start,volume,l_s_end,l_r_end\n".into(),
                allocations: "t,flow_id,rate_mbytes_per_s\n".into(),
                samples: "t,app_id,throughput,link_id,utilization\n".into(),
                groups: (cfg.allocator == crate::allocator::AllocatorChoice::AppFair)
                    .then(|| "t,queue,apps\n".to_string()),
            },
        }
    }

    pub fn completion(&mut self, app: usize, finish: f64, latency: f64) {
        self.sink_now[app] += 1;
        if finish >= self.warmup_end {
            self.latencies.push(latency);
        }
    }

    pub fn sample(
        &mut self,
        t0: f64,
        period: f64,
        sets: &LinkFlowSets,
        caps: &[f64],
        carried: &[f64],
        max_tuple: &[u64],
    ) {
        let post = t0 >= self.warmup_end - 1e-9;
        for a in 0..self.sink_now.len() {
            let thr = self.sink_now[a] as f64 / period;
            let _ = writeln!(self.csv.samples, "{t0},{a},{thr},,");
            if post {
                self.app_samples[a].push(thr);
            }
            self.sink_epoch[a] += self.sink_now[a];
            self.sink_now[a] = 0;
        }
        for &l in &self.links {
            let members = sets.members(l);
            let bytes: f64 = members.iter().map(|f| carried[f.0]).sum();
            let cap_bytes = caps[l.0] * period * MB;
            let slack = members.iter().map(|f| max_tuple[f.0]).max().unwrap_or(0) as f64;
            if bytes > cap_bytes + slack + 1e-6 {
                self.coupling_violations += 1;
            }
            let util = if cap_bytes > 0.0 { bytes / cap_bytes } else { 0.0 };
            let _ = writeln!(self.csv.samples, "{t0},,,{},{util}", l.0);
            if post {
                self.link_samples[l.0].push(util);
            }
        }
        self.sample_index += 1;
        if self.sample_index.is_multiple_of(self.samples_per_epoch) {
            let epoch_start = t0 + period - self.cfg.delta_t;
            for a in 0..self.sink_epoch.len() {
                if epoch_start >= self.warmup_end - 1e-9 {
                    if self.sink_epoch[a] == 0 {
                        self.zero_streak[a] += 1;
                        self.longest_zero[a] = self.longest_zero[a].max(self.zero_streak[a]);
                    } else {
                        self.zero_streak[a] = 0;
                    }
                }
                self.sink_epoch[a] = 0;
            }
        }
    }

    pub fn allocation(&mut self, t: f64, rates: &[f64]) {
        for (f, r) in rates.iter().enumerate() {
            let _ = writeln!(self.csv.allocations, "{t},{f},{r}");
        }
    }

    pub fn flow_states(&mut self, t: f64, states: &[FlowState]) {
        for (f, s) in states.iter().enumerate() {
            let _ = writeln!(
                self.csv.flow_states,
                "{t},{f},{},{},{},{},{}",
                s.l_s_start, s.l_r_start, s.volume, s.l_s_end, s.l_r_end
            );
        }
    }

    pub fn check_feasibility(&mut self, sets: &LinkFlowSets, caps: &[f64], rates: &[f64]) {
        let (all, internal) = violation_split(sets, caps, rates);
        self.allocation_violations += all;
        self.internal_violations += internal;
        self.epochs += 1;
    }

    /// Sender and receiver byte balances over one interval.
    pub fn check_identities(&mut self, start: &[FlowCounters], end: &[FlowCounters]) {
        for (s, e) in start.iter().zip(end) {
            let sent = e.delivered - s.delivered;
            let send_ok = e.send_bytes + sent == s.send_bytes + (e.generated - s.generated);
            let recv_ok = e.recv_bytes + (e.processed - s.processed) == s.recv_bytes + sent;
            if !(send_ok && recv_ok) {
                self.identity_failures += 1;
            }
        }
    }

    /// `t` closes the interval the detector measured.
    pub fn bottlenecks(&mut self, t: f64, bn: &BottleneckSets) {
        if t - self.cfg.delta_t >= self.warmup_end - 1e-9 {
            self.flagged.extend(bn.links());
        }
    }

    pub fn groups(&mut self, t: f64, g: &PriorityGroups) {
        if let Some(csv) = self.csv.groups.as_mut() {
            for (q, apps) in g.queues.iter().enumerate() {
                let list: Vec<String> = apps.iter().map(|a| a.to_string()).collect();
                let _ = writeln!(csv, "{t},{q},{}", list.join(" "));
            }
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

pub(crate) fn collect_metrics(rec: Recorder, resident: &[u64], topology: &Topology) -> (Summary, Csvs) {
    let apps: Vec<AppSummary> = rec
        .app_names
        .iter()
        .enumerate()
        .map(|(a, name)| AppSummary {
            name: name.clone(),
            throughput: mean(&rec.app_samples[a]),
            created: rec.created[a],
            consumed: rec.consumed[a],
            resident: resident[a],
            conserved: rec.created[a] == rec.consumed[a] + resident[a],
            longest_zero_epochs: rec.longest_zero[a],
        })
        .collect();
    let latency = (!rec.latencies.is_empty()).then(|| {
        let mut s = rec.latencies.clone();
        s.sort_by(f64::total_cmp);
        LatencySummary { samples: s.len(), mean: mean(&s), p50: percentile(&s, 0.5), p99: percentile(&s, 0.99) }
    });
    let bottleneck_links: Vec<LinkUtilization> = rec
        .flagged
        .iter()
        .map(|l| LinkUtilization {
            link: l.0,
            label: topology.link(*l).label(),
            utilization: mean(&rec.link_samples[l.0]),
        })
        .collect();
    let utilization = (!bottleneck_links.is_empty())
        .then(|| bottleneck_links.iter().map(|l| l.utilization).sum::<f64>() / bottleneck_links.len() as f64);
    let per_app: Vec<f64> = apps.iter().map(|a| a.throughput).collect();
    let jain = if per_app.len() > 1 { jain_index(&per_app).ok() } else { None };
    let summary = Summary {
        scenario: rec.scenario,
        allocator: rec.cfg.allocator.label().to_string(),
        capacity_mbps: rec.capacity_mbps,
        throughput: per_app.iter().sum(),
        conservation_ok: apps.iter().all(|a| a.conserved) && rec.identity_failures == 0,
        apps,
        latency,
        utilization,
        bottleneck_links,
        jain,
        epochs: rec.epochs,
        allocation_violations: rec.allocation_violations,
        internal_violations: rec.internal_violations,
        coupling_violations: rec.coupling_violations,
        identity_failures: rec.identity_failures,
        config: rec.cfg,
    };
    (summary, rec.csv)
}
