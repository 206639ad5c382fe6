//! Per-link solvers and the passes that stitch their outputs together.

use std::collections::BTreeMap;

use crate::app::{Flow, FlowId, LinkFlowSets};
use crate::error::{Error, Result};
use crate::topology::LinkId;

use super::{EPS_P, EPS_W};

/// Partial per-flow rates produced by a solver, MB/s.
pub type Rates = BTreeMap<FlowId, f64>;

fn check(n: usize, capacity: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyFlowSet);
    }
    if !(capacity > 0.0) {
        return Err(Error::NonPositiveCapacity(capacity));
    }
    Ok(())
}

/// Fork-side min-max transfer time. The largest `weight / grant` under a
/// fixed capacity is smallest when every ratio is equal, so grants are
/// proportional to weights.
/// Weights are floored at [`EPS_W`].
pub fn solve_uplink(weights: &[f64], capacity: f64) -> Result<Vec<f64>> {
    check(weights.len(), capacity)?;
    let eff: Vec<f64> = weights.iter().map(|w| w.max(EPS_W)).collect();
    let total: f64 = eff.iter().sum();
    Ok(eff.iter().map(|w| capacity * w / total).collect())
}

/// Join-side min-max drain time `(backlog + grant * dt) / processing`
/// subject to the grants summing to capacity, all non-negative. Water-fills
/// a common drain time over the active set; flows whose backlog alone
/// outlasts it get nothing.
/// Processing rates are floored at [`EPS_P`].
pub fn solve_downlink(backlogs: &[f64], processing: &[f64], capacity: f64, dt: f64) -> Result<Vec<f64>> {
    check(backlogs.len(), capacity)?;
    assert_eq!(backlogs.len(), processing.len());
    assert!(dt > 0.0, "interval must be positive");
    let proc_rate: Vec<f64> = processing.iter().map(|r| r.max(EPS_P)).collect();
    let backlog: Vec<f64> = backlogs.iter().map(|b| b.max(0.0)).collect();
    let mut active = vec![true; backlog.len()];
    let mut grant = vec![0.0; backlog.len()];
    loop {
        let (total_backlog, total_proc) =
            (0..backlog.len()).filter(|&i| active[i]).fold((0.0, 0.0), |(a, b), i| (a + backlog[i], b + proc_rate[i]));
        let drain = (capacity * dt + total_backlog) / total_proc;
        let mut dropped = false;
        for i in 0..backlog.len() {
            if !active[i] {
                grant[i] = 0.0;
                continue;
            }
            grant[i] = (drain * proc_rate[i] - backlog[i]) / dt;
            if grant[i] < 0.0 {
                // The drain time only falls as flows leave, so a negative flow stays out.
                active[i] = false;
                grant[i] = 0.0;
                dropped = true;
            }
        }
        if !dropped {
            break;
        }
    }
    // Float residual goes to positive-rate flows by processing rate.
    let residual = capacity - grant.iter().sum::<f64>();
    let proc_positive: f64 = (0..grant.len()).filter(|&i| grant[i] > 0.0).map(|i| proc_rate[i]).sum();
    if residual.abs() > 0.0 && proc_positive > 0.0 {
        for i in 0..grant.len() {
            if grant[i] > 0.0 {
                grant[i] = (grant[i] + residual * proc_rate[i] / proc_positive).max(0.0);
            }
        }
    }
    Ok(grant)
}

/// A flow takes the smaller of its uplink and downlink grants.
pub fn combine_min(up: &Rates, down: &Rates) -> Result<Rates> {
    if let Some(f) = up.keys().find(|f| !down.contains_key(f)).or_else(|| down.keys().find(|f| !up.contains_key(f))) {
        return Err(Error::FlowMissing(f.0));
    }
    Ok(up.iter().map(|(f, u)| (*f, u.min(down[f]))).collect())
}

/// Rescales flows on every selected link whose summed rate exceeds its
/// capacity by `capacity / sum`; a flow on several such links keeps the
/// smallest candidate. Rates never increase.
pub fn scale_links<F>(rates: &[f64], sets: &LinkFlowSets, capacities: &[f64], mut select: F) -> Vec<f64>
where
    F: FnMut(LinkId) -> bool,
{
    let mut out = rates.to_vec();
    for (link, members) in sets.iter() {
        if members.is_empty() || !select(link) {
            continue;
        }
        let demand: f64 = members.iter().map(|f| rates[f.0]).sum();
        let cap = capacities[link.0];
        if demand > cap {
            let factor = if demand > 0.0 { cap / demand } else { 0.0 };
            for f in members {
                out[f.0] = out[f.0].min(rates[f.0] * factor);
            }
        }
    }
    out
}

/// Proportional scaling on congested internal links.
pub fn scale_internal(rates: &[f64], sets: &LinkFlowSets, capacities: &[f64]) -> Vec<f64> {
    scale_links(rates, sets, capacities, |l| sets.kind(l).is_internal())
}

pub const BACKFILL_PASSES: usize = 3;

/// Hands residual link capacity to member flows in proportion to their
/// current rate, never pushing any link on a flow's route past capacity.
/// Only flows for which `eligible` holds receive extra rate.
pub fn backfill<E>(rates: &[f64], sets: &LinkFlowSets, capacities: &[f64], flows: &[Flow], eligible: E) -> Vec<f64>
where
    E: Fn(FlowId) -> bool,
{
    const TOL: f64 = 1e-12;
    let mut rates = rates.to_vec();
    let mut residual: Vec<f64> =
        sets.iter().map(|(l, m)| capacities[l.0] - m.iter().map(|f| rates[f.0]).sum::<f64>()).collect();
    let headroom = |f: &Flow, residual: &[f64]| {
        f.route.link_ids.iter().map(|l| residual[l.0]).fold(f64::INFINITY, f64::min).max(0.0)
    };

    for _ in 0..BACKFILL_PASSES {
        let mut granted_any = false;
        for (link, members) in sets.iter() {
            if residual[link.0] <= TOL {
                continue;
            }
            let mut open: Vec<FlowId> = members
                .iter()
                .copied()
                .filter(|f| eligible(*f) && rates[f.0] > 0.0 && headroom(&flows[f.0], &residual) > TOL)
                .collect();
            // Water-fill the residual over open flows, proportional to rates.
            let mut extra: BTreeMap<FlowId, f64> = BTreeMap::new();
            let mut left = residual[link.0];
            while !open.is_empty() && left > TOL {
                let weight: f64 = open.iter().map(|f| rates[f.0]).sum();
                let capped: Vec<FlowId> = open
                    .iter()
                    .copied()
                    .filter(|f| left * rates[f.0] / weight >= headroom(&flows[f.0], &residual))
                    .collect();
                if capped.is_empty() {
                    for f in &open {
                        extra.insert(*f, left * rates[f.0] / weight);
                    }
                    break;
                }
                for f in capped {
                    let h = headroom(&flows[f.0], &residual);
                    extra.insert(f, h);
                    left -= h;
                    open.retain(|g| *g != f);
                }
            }
            for (f, e) in extra {
                let grant = e.min(headroom(&flows[f.0], &residual));
                if grant <= 0.0 {
                    continue;
                }
                rates[f.0] += grant;
                for l in &flows[f.0].route.link_ids {
                    residual[l.0] -= grant;
                }
                granted_any = true;
            }
        }
        if !granted_any {
            break;
        }
    }
    rates
}
