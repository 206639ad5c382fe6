#![allow(dead_code)]

use std::path::Path;

use streamband::allocator::AllocatorChoice;
use streamband::app::{Flow, FlowId, InstanceId, LinkFlowSets};
use streamband::scenario::{parse_str, Scenario};
use streamband::sim::{run, RunOutput, SimConfig};
use streamband::topology::{FabricCapacities, LinkId, MachineId, Route, Topology};

/// One source on M0 feeding one sink on M1 over 10 MB/s edge links.
pub fn pipeline(rate: f64, tuple_mb: f64, service: f64, duration: f64) -> Scenario {
    let text = format!(
        r#"{{
  "name": "pipeline",
  "topology": {{ "racks": 1, "machines_per_rack": 2, "cores": 1,
                 "uplink_mbps": 80, "downlink_mbps": 80, "internal_mbps": 80 }},
  "apps": [{{
    "name": "p",
    "operators": [
      {{ "name": "src", "parallelism": 1, "kind": "source", "out_tuple_size": {tuple_mb} }},
      {{ "name": "sink", "parallelism": 1, "kind": "sink", "service_rate": {service} }}
    ],
    "edges": [{{ "from": "src", "to": "sink", "grouping": {{ "type": "shuffle" }} }}],
    "workload": [{{ "operator": "src", "rate": {rate}, "arrival": "constant" }}],
    "placement": {{ "explicit": {{ "src#0": 0, "sink#0": 1 }} }}
  }}],
  "sim": {{ "duration": {duration}, "delta_t": 5, "seed": 1, "allocators": ["app_aware", "maxmin_tcp"] }}
}}"#
    );
    parse_str(&text, Path::new("pipeline.json")).unwrap()
}

pub fn simulate(s: &Scenario, allocator: AllocatorChoice, capacity_mbps: Option<f64>, duration: f64) -> RunOutput {
    let mut cfg = SimConfig::from_scenario(s, allocator);
    cfg.duration = duration;
    run(s, capacity_mbps, &cfg).unwrap()
}

/// A fabric whose first `links` link ids carry hand-chosen routes. The
/// topology only supplies link kinds; routes need not be physical paths.
pub fn custom_flows(routes: &[Vec<usize>]) -> (Vec<Flow>, LinkFlowSets, usize) {
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
    (flows, sets, t.links().len())
}

/// True when no flow can grow, alone or at the expense of one strictly
/// larger flow, without breaking a capacity or exceeding its demand.
pub fn is_maxmin(routes: &[Vec<usize>], caps: &[f64], demands: &[f64], x: &[f64]) -> bool {
    let tol = 1e-9;
    let load = |l: usize| -> f64 { routes.iter().zip(x).filter(|(r, _)| r.contains(&l)).map(|(_, v)| v).sum() };
    let tight: Vec<bool> = (0..caps.len()).map(|l| caps[l] - load(l) <= tol * caps[l].max(1.0)).collect();
    for i in 0..x.len() {
        if x[i] >= demands[i] - tol * demands[i].max(1.0) || routes[i].is_empty() {
            continue;
        }
        let blocked: Vec<usize> = routes[i].iter().copied().filter(|&l| tight[l]).collect();
        if blocked.is_empty() {
            return false;
        }
        for j in 0..x.len() {
            if j != i && x[j] > x[i] + tol && blocked.iter().all(|l| routes[j].contains(l)) {
                return false;
            }
        }
        // Stronger than pairwise: some tight link must hold no larger flow.
        let has_bottleneck = blocked
            .iter()
            .any(|&l| routes.iter().zip(x).filter(|(r, _)| r.contains(&l)).all(|(_, v)| *v <= x[i] + tol));
        if !has_bottleneck {
            return false;
        }
    }
    true
}

pub fn feasible(routes: &[Vec<usize>], caps: &[f64], x: &[f64]) -> bool {
    (0..caps.len()).all(|l| {
        let load: f64 = routes.iter().zip(x).filter(|(r, _)| r.contains(&l)).map(|(_, v)| v).sum();
        load <= caps[l] + 1e-9 * caps[l].max(1.0)
    }) && x.iter().all(|v| *v >= 0.0)
}
