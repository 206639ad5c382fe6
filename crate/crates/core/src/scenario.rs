//! Scenario files: topology, applications, workload, placement, simulation
//! and fairness settings, plus the capacity sweep that defines a matrix.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::allocator::{AllocatorChoice, FairnessConfig};
use crate::app::{expand, place_round_robin, AppDag, DagEdge, Grouping, InstanceGraph, OperatorSpec, Placement};
use crate::error::{Error, Result};
use crate::sim::workload::{Arrival, Pause};
use crate::topology::{mbps_to_mbytes, FabricCapacities, LinkId, LinkKind, MachineId, Topology};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub racks: usize,
    pub machines_per_rack: usize,
    pub cores: usize,
    pub uplink_mbps: f64,
    pub downlink_mbps: f64,
    pub internal_mbps: f64,
}

/// Links whose capacity is overridden by the sweep. A `machine` narrows
/// edge kinds to one machine; without it every link of the kind matches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkTarget {
    pub kind: LinkKind,
    #[serde(default)]
    pub machine: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BottleneckConfig {
    pub targets: Vec<LinkTarget>,
    pub sweep_mbps: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeConfig {
    pub from: String,
    pub to: String,
    pub grouping: Grouping,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceWorkload {
    pub operator: String,
    /// Tuples per second per source instance.
    pub rate: f64,
    #[serde(default)]
    pub arrival: Arrival,
    #[serde(default)]
    pub pause: Option<Pause>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PlacementConfig {
    /// Instances in declaration order cycle over `machines` (all machines
    /// when empty).
    RoundRobin {
        #[serde(default)]
        machines: Vec<usize>,
    },
    /// `"Operator#replica"` to machine index.
    Explicit(BTreeMap<String, usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub name: String,
    pub operators: Vec<OperatorSpec>,
    pub edges: Vec<EdgeConfig>,
    pub workload: Vec<SourceWorkload>,
    pub placement: PlacementConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub duration: f64,
    #[serde(default = "default_sample_period")]
    pub sample_period: f64,
    #[serde(default = "default_delta_t")]
    pub delta_t: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_allocators")]
    pub allocators: Vec<AllocatorChoice>,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
}

fn default_sample_period() -> f64 {
    1.0
}
fn default_delta_t() -> f64 {
    5.0
}
fn default_allocators() -> Vec<AllocatorChoice> {
    vec![AllocatorChoice::AppAware, AllocatorChoice::MaxminTcp]
}
fn default_warmup() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairnessSection {
    pub alpha: f64,
    pub m: usize,
    pub regroup_period: f64,
    #[serde(default = "default_threshold")]
    pub starvation_threshold: u32,
    /// Alpha values run for the app_fair allocator; empty means `alpha` only.
    #[serde(default)]
    pub alpha_sweep: Vec<f64>,
}

fn default_threshold() -> u32 {
    3
}

impl FairnessSection {
    pub fn config(&self, alpha: f64) -> FairnessConfig {
        FairnessConfig {
            alpha,
            m: self.m,
            regroup_period: self.regroup_period,
            starvation_threshold: self.starvation_threshold,
        }
    }

    pub fn alphas(&self) -> Vec<f64> {
        if self.alpha_sweep.is_empty() {
            vec![self.alpha]
        } else {
            self.alpha_sweep.clone()
        }
    }
}

impl Default for FairnessSection {
    fn default() -> Self {
        let c = FairnessConfig::default();
        FairnessSection {
            alpha: c.alpha,
            m: c.m,
            regroup_period: c.regroup_period,
            starvation_threshold: c.starvation_threshold,
            alpha_sweep: vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalTraffic {
    pub kind: LinkKind,
    #[serde(default)]
    pub machine: Option<usize>,
    pub rate_mbps: f64,
}

/// Raw file contents; every section is optional so that a missing one can be
/// reported by name alongside all other problems.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    topology: Option<TopologyConfig>,
    #[serde(default)]
    bottleneck: Option<BottleneckConfig>,
    apps: Option<Vec<AppConfig>>,
    sim: Option<SimSection>,
    #[serde(default)]
    fairness: Option<FairnessSection>,
    #[serde(default)]
    external_traffic: Vec<ExternalTraffic>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub topology: TopologyConfig,
    pub bottleneck: Option<BottleneckConfig>,
    pub apps: Vec<AppConfig>,
    pub sim: SimSection,
    pub fairness: FairnessSection,
    pub external_traffic: Vec<ExternalTraffic>,
}

/// A validated application ready for simulation.
#[derive(Clone, Debug)]
pub struct BuiltApp {
    pub name: String,
    pub graph: InstanceGraph,
    pub placement: Placement,
    pub workload: Vec<SourceWorkload>,
}

const BUNDLED: &[(&str, &str)] = &[
    ("ti_bottleneck", include_str!("../../../scenarios/ti_bottleneck.json")),
    ("tt_bottleneck", include_str!("../../../scenarios/tt_bottleneck.json")),
    ("ti_multihop", include_str!("../../../scenarios/ti_multihop.json")),
    ("fair_5apps", include_str!("../../../scenarios/fair_5apps.json")),
];

pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn bundled(name: &str) -> Option<Scenario> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(n, text)| parse_str(text, Path::new(&format!("{n}.json"))).expect("bundled scenario is valid"))
}

/// A file path, or the name of a bundled scenario.
pub fn load(source: &str) -> Result<Scenario> {
    let path = Path::new(source);
    if !path.exists() {
        if let Some(s) = bundled(source) {
            return Ok(s);
        }
    }
    parse_scenario(path)
}

pub fn parse_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    parse_str(&text, path)
}

pub fn parse_str(text: &str, path: &Path) -> Result<Scenario> {
    let raw: RawScenario = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: PathBuf::from(path),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut problems = Vec::new();
    for (section, present) in [
        ("name", raw.name.is_some()),
        ("topology", raw.topology.is_some()),
        ("apps", raw.apps.is_some()),
        ("sim", raw.sim.is_some()),
    ] {
        if !present {
            problems.push(format!("missing required section `{section}`"));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let scenario = Scenario {
        name: raw.name.unwrap(),
        topology: raw.topology.unwrap(),
        bottleneck: raw.bottleneck,
        apps: raw.apps.unwrap(),
        sim: raw.sim.unwrap(),
        fairness: raw.fairness.unwrap_or_default(),
        external_traffic: raw.external_traffic,
    };
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    /// Checks every section and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        let t = &self.topology;
        if t.racks == 0 || t.machines_per_rack == 0 || t.cores == 0 {
            p.push("topology: racks, machines_per_rack and cores must be positive".to_string());
        }
        for (what, v) in
            [("uplink_mbps", t.uplink_mbps), ("downlink_mbps", t.downlink_mbps), ("internal_mbps", t.internal_mbps)]
        {
            if !(v > 0.0 && v.is_finite()) {
                p.push(format!("topology.{what} must be positive, got {v}"));
            }
        }
        let machines = t.racks * t.machines_per_rack;
        if let Some(b) = &self.bottleneck {
            if b.targets.is_empty() {
                p.push("bottleneck.targets must not be empty".into());
            }
            if b.sweep_mbps.is_empty() || b.sweep_mbps.iter().any(|c| !(*c > 0.0)) {
                p.push("bottleneck.sweep_mbps must list positive capacities".into());
            }
            for target in &b.targets {
                check_target(target.kind, target.machine, machines, "bottleneck.targets", &mut p);
            }
        }
        for x in &self.external_traffic {
            check_target(x.kind, x.machine, machines, "external_traffic", &mut p);
            if !(x.rate_mbps >= 0.0) {
                p.push(format!("external_traffic rate must be non-negative, got {}", x.rate_mbps));
            }
        }
        let s = &self.sim;
        if !(s.duration > 0.0) {
            p.push(format!("sim.duration must be positive, got {}", s.duration));
        }
        if let Err(Error::Validation(v)) = crate::profiler::IntervalClock::new(s.sample_period, s.delta_t) {
            p.extend(v.into_iter().map(|m| format!("sim: {m}")));
        }
        if s.allocators.is_empty() {
            p.push("sim.allocators must not be empty".into());
        }
        let f = &self.fairness;
        for a in std::iter::once(f.alpha).chain(f.alpha_sweep.iter().copied()) {
            if !(0.0..=1.0).contains(&a) {
                p.push(format!("fairness: {}", Error::AlphaOutOfRange(a)));
            }
        }
        if f.m == 0 {
            p.push("fairness.m must be at least 1".into());
        }
        if !(f.regroup_period > 0.0) {
            p.push("fairness.regroup_period must be positive".into());
        }
        if self.apps.is_empty() {
            p.push("apps must define at least one application".into());
        }
        for app in &self.apps {
            if let Err(e) = self.build_app(app, machines) {
                p.push(format!("app `{}`: {e}", app.name));
            }
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(p))
        }
    }

    fn build_app(&self, app: &AppConfig, machines: usize) -> Result<BuiltApp> {
        let edges = app
            .edges
            .iter()
            .map(|e| {
                let idx = |n: &str| {
                    app.operators
                        .iter()
                        .position(|o| o.name == n)
                        .ok_or_else(|| Error::InvalidDag(format!("edge references unknown operator `{n}`")))
                };
                Ok(DagEdge { from: idx(&e.from)?, to: idx(&e.to)?, grouping: e.grouping.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        let dag = AppDag { operators: app.operators.clone(), edges };
        dag.validate()?;
        let graph = expand(&dag)?;
        for w in &app.workload {
            match dag.operator_index(&w.operator) {
                Some(i) if dag.operators[i].kind == crate::app::OperatorKind::Source => {}
                _ => return Err(Error::InvalidDag(format!("workload names `{}`, which is not a source", w.operator))),
            }
            if !(w.rate >= 0.0 && w.rate.is_finite()) {
                return Err(Error::InvalidDag(format!("workload rate for `{}` must be non-negative", w.operator)));
            }
        }
        let placement = match &app.placement {
            PlacementConfig::RoundRobin { machines: list } => {
                let ms: Vec<MachineId> = if list.is_empty() {
                    (0..machines).map(MachineId).collect()
                } else {
                    list.iter().map(|m| MachineId(*m)).collect()
                };
                if let Some(m) = ms.iter().find(|m| m.0 >= machines) {
                    return Err(Error::Placement(format!("machine {m} does not exist")));
                }
                place_round_robin(&graph, &ms)?
            }
            PlacementConfig::Explicit(map) => {
                let mut assignment = vec![None; graph.instances.len()];
                for (name, m) in map {
                    let id = graph.find(name).ok_or_else(|| Error::Placement(format!("unknown instance `{name}`")))?;
                    if *m >= machines {
                        return Err(Error::Placement(format!("instance `{name}` placed on missing machine {m}")));
                    }
                    assignment[id.0] = Some(MachineId(*m));
                }
                let missing: Vec<String> = assignment
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| a.is_none())
                    .map(|(i, _)| graph.name(crate::app::InstanceId(i)))
                    .collect();
                if !missing.is_empty() {
                    return Err(Error::Placement(format!("unplaced instances: {}", missing.join(", "))));
                }
                Placement { assignment: assignment.into_iter().map(Option::unwrap).collect() }
            }
        };
        Ok(BuiltApp { name: app.name.clone(), graph, placement, workload: app.workload.clone() })
    }

    pub fn built_apps(&self) -> Result<Vec<BuiltApp>> {
        let machines = self.topology.racks * self.topology.machines_per_rack;
        self.apps.iter().map(|a| self.build_app(a, machines)).collect()
    }

    /// Capacity cells of the sweep; `None` runs the base topology once.
    pub fn capacities(&self) -> Vec<Option<f64>> {
        match &self.bottleneck {
            Some(b) => b.sweep_mbps.iter().map(|c| Some(*c)).collect(),
            None => vec![None],
        }
    }

    /// The fabric for one cell, capacities in MB/s, with sweep overrides.
    pub fn build_topology(&self, capacity_mbps: Option<f64>) -> Result<Topology> {
        let t = &self.topology;
        let mut topo = Topology::build_fat_tree(
            t.racks,
            t.machines_per_rack,
            t.cores,
            FabricCapacities {
                uplink: mbps_to_mbytes(t.uplink_mbps),
                downlink: mbps_to_mbytes(t.downlink_mbps),
                internal: mbps_to_mbytes(t.internal_mbps),
            },
        )?;
        if let (Some(b), Some(c)) = (&self.bottleneck, capacity_mbps) {
            let links: Vec<LinkId> = b.targets.iter().flat_map(|x| matching_links(&topo, x.kind, x.machine)).collect();
            for l in links {
                topo.set_link_capacity(l, mbps_to_mbytes(c))?;
            }
        }
        Ok(topo)
    }

    /// Allocatable capacity per link after subtracting external traffic.
    pub fn allocatable(&self, topo: &Topology) -> Vec<f64> {
        let mut external = vec![0.0; topo.links().len()];
        for x in &self.external_traffic {
            for l in matching_links(topo, x.kind, x.machine) {
                external[l.0] += mbps_to_mbytes(x.rate_mbps);
            }
        }
        topo.links().iter().map(|l| crate::topology::allocatable_capacity(l, external[l.id.0])).collect()
    }
}

fn check_target(kind: LinkKind, machine: Option<usize>, machines: usize, what: &str, p: &mut Vec<String>) {
    match machine {
        Some(m) if kind.is_internal() => p.push(format!("{what}: machine {m} given for an internal link kind")),
        Some(m) if m >= machines => p.push(format!("{what}: machine {m} does not exist")),
        _ => {}
    }
}

fn matching_links(topo: &Topology, kind: LinkKind, machine: Option<usize>) -> Vec<LinkId> {
    match (kind, machine) {
        (LinkKind::Uplink, Some(m)) => vec![topo.uplink(MachineId(m))],
        (LinkKind::Downlink, Some(m)) => vec![topo.downlink(MachineId(m))],
        _ => topo.links().iter().filter(|l| l.kind == kind).map(|l| l.id).collect(),
    }
}
