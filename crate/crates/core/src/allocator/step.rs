//! One application-aware allocation decision.

use crate::app::{Flow, LinkFlowSets};
use crate::error::{Error, Result};
use crate::profiler::FlowState;

use super::bottleneck::{detect_bottlenecks, BottleneckSets};
use super::solvers::{backfill, scale_internal, scale_links, solve_downlink, solve_uplink, Rates};
use super::{AllocationVector, EPS_P};

/// Everything an allocator sees at an epoch boundary. Slices are indexed by
/// flow id (`states`, `prior`) or link id (`capacities`, allocatable MB/s).
#[derive(Clone, Copy, Debug)]
pub struct EpochInput<'a> {
    pub flows: &'a [Flow],
    pub sets: &'a LinkFlowSets,
    pub states: &'a [FlowState],
    pub capacities: &'a [f64],
    /// Rates in force during the interval just measured.
    pub prior: &'a [f64],
    /// Epoch start time, seconds.
    pub t: f64,
    pub dt: f64,
}

/// Flows crossing no congested link get the rate that would carry their
/// last volume plus current backlog, floored at [`EPS_P`].
pub fn demand_proxy(state: &FlowState) -> f64 {
    state.demand().max(EPS_P)
}

/// Detects bottlenecks, solves the fork side per congested uplink and the
/// join side per congested downlink, keeps each flow's tighter grant,
/// rescales congested links and backfills leftover capacity to the
/// bottlenecked flows.
pub fn allocate_step(input: &EpochInput) -> Result<(AllocationVector, BottleneckSets)> {
    let EpochInput { flows, sets, states, capacities, prior, dt, .. } = *input;
    let bn = detect_bottlenecks(sets, states, capacities, prior);

    let mut up = Rates::new();
    for &link in &bn.uplinks {
        let members = sets.members(link);
        let cap = capacities[link.0];
        if cap <= 0.0 {
            up.extend(members.iter().map(|f| (*f, 0.0)));
            continue;
        }
        let weights: Vec<f64> = members.iter().map(|f| states[f.0].uplink_weight()).collect();
        for (f, x) in members.iter().zip(solve_uplink(&weights, cap)?) {
            let slot = up.entry(*f).or_insert(x);
            *slot = slot.min(x);
        }
    }
    let mut down = Rates::new();
    for &link in &bn.downlinks {
        let members = sets.members(link);
        let cap = capacities[link.0];
        if cap <= 0.0 {
            down.extend(members.iter().map(|f| (*f, 0.0)));
            continue;
        }
        let backlogs: Vec<f64> = members.iter().map(|f| states[f.0].l_r_end).collect();
        let rates: Vec<f64> = members.iter().map(|f| states[f.0].processing_rate()).collect();
        for (f, x) in members.iter().zip(solve_downlink(&backlogs, &rates, cap, dt)?) {
            let slot = down.entry(*f).or_insert(x);
            *slot = slot.min(x);
        }
    }

    let mut rates = vec![0.0; flows.len()];
    for f in flows.iter().filter(|f| !f.is_internal) {
        let id = f.id;
        rates[id.0] = match (up.get(&id), down.get(&id)) {
            (Some(u), Some(d)) => u.min(*d),
            (Some(u), None) => *u,
            (None, Some(d)) => *d,
            (None, None) => demand_proxy(&states[id.0]),
        };
    }

    let rates = scale_internal(&rates, sets, capacities);
    // Edge links carrying non-bottleneck flows can still be oversubscribed
    // by demand proxies; every link is brought back within capacity.
    let rates = scale_links(&rates, sets, capacities, |_| true);
    let rates = backfill(&rates, sets, capacities, flows, |f| bn.flows.contains(&f));

    if let Some((i, r)) = rates.iter().enumerate().find(|(_, r)| !r.is_finite() || **r < 0.0) {
        return Err(Error::NonFiniteRate { flow: i, rate: *r });
    }
    Ok((AllocationVector { rates, epoch: input.t }, bn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::violations;
    use crate::app::tests::op;
    use crate::app::{expand, flow_map, AppDag, Grouping, OperatorKind, Placement};
    use crate::topology::{FabricCapacities, MachineId, Topology};

    /// `senders` instances of A on M0 feed one B on M1 (shuffle), or fan out
    /// to one B each on M1, M2 (all) when `fork` is set.
    fn fixture(caps: FabricCapacities, fork: bool) -> (Topology, Vec<Flow>, LinkFlowSets) {
        let t = Topology::build_fat_tree(1, 3, 1, caps).unwrap();
        let dag = if fork {
            AppDag::new(
                vec![op("A", 1, OperatorKind::Source), op("B", 2, OperatorKind::Sink)],
                vec![("A", "B", Grouping::All)],
            )
        } else {
            AppDag::new(
                vec![op("A", 2, OperatorKind::Source), op("B", 1, OperatorKind::Sink)],
                vec![("A", "B", Grouping::Shuffle)],
            )
        }
        .unwrap();
        let g = expand(&dag).unwrap();
        let assignment = if fork {
            vec![MachineId(0), MachineId(1), MachineId(2)]
        } else {
            vec![MachineId(0), MachineId(0), MachineId(1)]
        };
        let (flows, sets) = flow_map(&g, &Placement { assignment }, &t, 0, 0).unwrap();
        (t, flows, sets)
    }

    fn caps(uplink: f64, downlink: f64) -> FabricCapacities {
        FabricCapacities { uplink, downlink, internal: 100.0 }
    }

    fn st(volume: f64, l_s_end: f64) -> FlowState {
        FlowState { volume, l_s_end, interval: 1.0, ..Default::default() }
    }

    fn step(t: &Topology, flows: &[Flow], sets: &LinkFlowSets, states: &[FlowState]) -> (Vec<f64>, BottleneckSets) {
        let capacities = t.capacities();
        let prior = vec![0.0; flows.len()];
        let input = EpochInput { flows, sets, states, capacities: &capacities, prior: &prior, t: 0.0, dt: 1.0 };
        let (a, bn) = allocate_step(&input).unwrap();
        assert!(violations(sets, &capacities, &a.rates).is_empty());
        (a.rates, bn)
    }

    #[test]
    fn quiet_flows_get_their_demand() {
        let (t, flows, sets) = fixture(caps(10.0, 10.0), true);
        let (x, bn) = step(&t, &flows, &sets, &[st(1.0, 0.5), st(2.0, 0.0)]);
        assert_eq!(bn, BottleneckSets::default());
        assert_eq!(x, vec![1.5, 2.0]);
    }

    #[test]
    fn single_uplink_bottleneck_matches_solver() {
        let (t, flows, sets) = fixture(caps(10.0, 100.0), true);
        let states = [st(6.0, 2.0), st(3.5, 0.0)];
        let (x, bn) = step(&t, &flows, &sets, &states);
        assert_eq!(bn.uplinks.len(), 1);
        assert!(bn.downlinks.is_empty());
        let expect = solve_uplink(&[10.0, 3.5], 10.0).unwrap();
        for (a, b) in x.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{x:?} vs {expect:?}");
        }
    }

    #[test]
    fn large_tuple_stream_gets_majority_of_shared_links() {
        let (t, flows, sets) = fixture(caps(10.0, 10.0), false);
        // 4:1 byte volumes, both backlogged, receiver keeps up.
        let (x, bn) = step(&t, &flows, &sets, &[st(8.0, 4.0), st(2.0, 1.0)]);
        assert_eq!(bn.flows.len(), 2);
        assert!(x[0] / (x[0] + x[1]) > 0.5, "{x:?}");
        assert!((x[0] + x[1] - 10.0).abs() < 1e-9);
    }
}
