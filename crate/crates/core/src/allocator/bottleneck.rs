//! Which links are congested this interval, and which flows cross them.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::app::{FlowId, LinkFlowSets};
use crate::profiler::FlowState;
use crate::topology::{LinkId, LinkKind};

/// Fraction of capacity at which a link counts as saturated.
pub const SATURATION: f64 = 0.95;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BottleneckSets {
    pub uplinks: BTreeSet<LinkId>,
    pub downlinks: BTreeSet<LinkId>,
    pub internal: BTreeSet<LinkId>,
    pub flows: BTreeSet<FlowId>,
}

impl BottleneckSets {
    pub fn contains_link(&self, link: LinkId) -> bool {
        self.uplinks.contains(&link) || self.downlinks.contains(&link) || self.internal.contains(&link)
    }

    pub fn links(&self) -> impl Iterator<Item = LinkId> + '_ {
        self.uplinks.iter().chain(&self.downlinks).chain(&self.internal).copied()
    }
}

/// A link is flagged when
/// (a) the rates in force during the interval saturated it and some member
///     flow both left a relevant backlog behind and used its own rate, or
/// (b) the measured member volume reached the saturation fraction.
///
/// The relevant backlog is the sender's for uplinks and internal links and
/// either end's for downlinks.
pub fn detect_bottlenecks(
    sets: &LinkFlowSets,
    states: &[FlowState],
    capacities: &[f64],
    prior: &[f64],
) -> BottleneckSets {
    let mut out = BottleneckSets::default();
    for (link, members) in sets.iter() {
        if members.is_empty() {
            continue;
        }
        let kind = sets.kind(link);
        let cap = capacities[link.0];
        let constrained = members.iter().any(|f| {
            let s = &states[f.0];
            let backlog = match kind {
                LinkKind::Downlink => s.l_s_end > 0.0 || s.l_r_end > 0.0,
                _ => s.l_s_end > 0.0,
            };
            backlog && s.volume / s.interval >= SATURATION * prior[f.0]
        });
        let allocated: f64 = members.iter().map(|f| prior[f.0]).sum();
        let measured: f64 = members.iter().map(|f| states[f.0].volume / states[f.0].interval).sum();
        let flagged = (constrained && allocated >= SATURATION * cap) || measured >= SATURATION * cap;
        if !flagged {
            continue;
        }
        match kind {
            LinkKind::Uplink => out.uplinks.insert(link),
            LinkKind::Downlink => out.downlinks.insert(link),
            LinkKind::RackToCore | LinkKind::CoreToRack => out.internal.insert(link),
        };
        out.flows.extend(members.iter().copied());
    }
    out
}
