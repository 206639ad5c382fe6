//! Max-min fair sharing: a single-resource water-fill and the multi-link
//! progressive-filling baseline that stands in for per-flow TCP fairness.

use crate::app::{Flow, LinkFlowSets};

const TOL: f64 = 1e-12;

/// Max-min split of `capacity` among claimants capped at `demands`
/// (which may be infinite). Returns one share per demand.
pub fn water_fill(capacity: f64, demands: &[f64]) -> Vec<f64> {
    let mut share = vec![0.0; demands.len()];
    let mut order: Vec<usize> = (0..demands.len()).collect();
    order.sort_by(|&a, &b| demands[a].total_cmp(&demands[b]).then(a.cmp(&b)));
    let mut left = capacity.max(0.0);
    let mut remaining = order.len();
    for i in order {
        let fair = left / remaining as f64;
        let give = demands[i].max(0.0).min(fair);
        share[i] = give;
        left -= give;
        remaining -= 1;
    }
    share
}

/// Progressive filling over all links: every unfrozen external flow grows at
/// the same pace until it meets its demand or one of its links saturates.
/// Internal flows get 0.
pub fn maxmin_baseline(flows: &[Flow], sets: &LinkFlowSets, capacities: &[f64], demands: &[f64]) -> Vec<f64> {
    let mut rates = vec![0.0; flows.len()];
    let mut active: Vec<bool> = flows.iter().map(|f| !f.is_internal && demands[f.id.0] > TOL).collect();
    let mut residual: Vec<f64> = capacities.iter().map(|c| c.max(0.0)).collect();

    // Flows on an already-empty link are frozen at zero.
    for (link, members) in sets.iter() {
        if residual[link.0] <= TOL {
            for f in members {
                active[f.0] = false;
            }
        }
    }

    while active.iter().any(|a| *a) {
        let mut step = f64::INFINITY;
        for (link, members) in sets.iter() {
            let n = members.iter().filter(|f| active[f.0]).count();
            if n > 0 {
                step = step.min(residual[link.0] / n as f64);
            }
        }
        for f in flows.iter().filter(|f| active[f.id.0]) {
            step = step.min(demands[f.id.0] - rates[f.id.0]);
        }
        if !step.is_finite() {
            break;
        }
        let step = step.max(0.0);
        for f in flows.iter().filter(|f| active[f.id.0]) {
            rates[f.id.0] += step;
            for l in &f.route.link_ids {
                residual[l.0] -= step;
            }
        }
        for (link, members) in sets.iter() {
            if residual[link.0] <= TOL * capacities[link.0].max(1.0) {
                for f in members {
                    active[f.0] = false;
                }
            }
        }
        for f in flows {
            let d = demands[f.id.0];
            if active[f.id.0] && d.is_finite() && d - rates[f.id.0] <= TOL * d.max(1.0) {
                active[f.id.0] = false;
            }
        }
    }
    rates
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::app::{FlowId, InstanceId};
    use crate::topology::{FabricCapacities, LinkId, MachineId, Route, Topology};

    #[test]
    fn water_fill_caps_small_demands() {
        let s = water_fill(10.0, &[1.0, f64::INFINITY, 20.0]);
        assert_eq!(s, vec![1.0, 4.5, 4.5]);
        let s = water_fill(10.0, &[2.0, 3.0]);
        assert_eq!(s, vec![2.0, 3.0]);
        let s = water_fill(6.0, &[f64::INFINITY; 3]);
        assert_eq!(s, vec![2.0; 3]);
        assert!(water_fill(5.0, &[]).is_empty());
    }

    /// Flows with hand-picked routes over the links of a 2-machine rack (six, four of them edge links).
    fn custom(routes: &[&[usize]]) -> (Vec<Flow>, LinkFlowSets) {
        let caps = FabricCapacities { uplink: 1.0, downlink: 1.0, internal: 1.0 };
        let t = Topology::build_fat_tree(1, 2, 1, caps).unwrap();
        let flows: Vec<Flow> = routes
            .iter()
            .enumerate()
            .map(|(i, r)| Flow {
                id: FlowId(i),
                app: 0,
                src_instance: InstanceId(i),
                dst_instance: InstanceId(i),
                src_machine: MachineId(0),
                dst_machine: MachineId(1),
                is_internal: false,
                route: Route { link_ids: r.iter().map(|l| LinkId(*l)).collect() },
                dag_edge: 0,
            })
            .collect();
        let sets = LinkFlowSets::from_flows(&t, &flows);
        (flows, sets)
    }

    #[test]
    fn baseline_examples() {
        let inf = f64::INFINITY;
        let (flows, sets) = custom(&[&[0], &[0]]);
        assert_eq!(maxmin_baseline(&flows, &sets, &[10.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[inf, inf]), vec![5.0, 5.0]);

        let (flows, sets) = custom(&[&[0], &[0, 1], &[1]]);
        let x = maxmin_baseline(&flows, &sets, &[10.0, 4.0, 0.0, 0.0, 0.0, 0.0], &[inf; 3]);
        assert_eq!(x, vec![8.0, 2.0, 2.0]);

        let (flows, sets) = custom(&[&[0, 1]]);
        assert_eq!(maxmin_baseline(&flows, &sets, &[10.0, 12.0, 0.0, 0.0, 0.0, 0.0], &[3.0]), vec![3.0]);
    }

    #[test]
    fn internal_flows_get_nothing() {
        let (mut flows, sets) = custom(&[&[0]]);
        flows[0].is_internal = true;
        assert_eq!(maxmin_baseline(&flows, &sets, &[10.0; 6], &[f64::INFINITY]), vec![0.0]);
    }
}
