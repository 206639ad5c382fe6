//! Streaming application model: the operator DAG, its expansion into parallel
//! instances, instance placement, and the resulting flow set with per-link
//! membership.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{LinkId, LinkKind, MachineId, Route, Topology};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Source,
    Transform,
    Sink,
}

/// How an instance with several inbound flows decides a tuple is ready.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum JoinMode {
    /// Tuples are served in arrival order.
    #[default]
    None,
    /// Tuples from the `primary` upstream operator wait until some tuple from
    /// another input with an emit time no later than theirs has arrived.
    /// Tuples from the other inputs only refresh join state.
    Latest { primary: String },
    /// A tuple is served only once every inbound flow has delivered data at
    /// least as recent as it (watermark alignment).
    Aligned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub name: String,
    pub parallelism: usize,
    pub kind: OperatorKind,
    /// Tuples per second per instance. Ignored for sources.
    #[serde(default)]
    pub service_rate: f64,
    /// Output tuples per processed input tuple.
    #[serde(default = "one")]
    pub selectivity: f64,
    /// Size of each emitted tuple, MB.
    #[serde(default)]
    pub out_tuple_size: f64,
    #[serde(default)]
    pub join: JoinMode,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Grouping {
    Shuffle,
    KeyBased { key_count: u64, skew: f64 },
    Global { target_index: usize },
    All,
}

impl Grouping {
    /// Key projection for key-based grouping.
    pub fn key_target(key: u64, parallelism: usize) -> usize {
        (key % parallelism as u64) as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DagEdge {
    pub from: usize,
    pub to: usize,
    pub grouping: Grouping,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AppDag {
    pub operators: Vec<OperatorSpec>,
    pub edges: Vec<DagEdge>,
}

impl AppDag {
    /// Builds a DAG from operators and `(from, to, grouping)` edges given by
    /// operator name.
    pub fn new(operators: Vec<OperatorSpec>, edges: Vec<(&str, &str, Grouping)>) -> Result<Self> {
        let index = |n: &str| {
            operators
                .iter()
                .position(|o| o.name == n)
                .ok_or_else(|| Error::InvalidDag(format!("edge references unknown operator `{n}`")))
        };
        let edges = edges
            .into_iter()
            .map(|(a, b, grouping)| Ok(DagEdge { from: index(a)?, to: index(b)?, grouping }))
            .collect::<Result<Vec<_>>>()?;
        let dag = AppDag { operators, edges };
        dag.validate()?;
        Ok(dag)
    }

    pub fn operator_index(&self, name: &str) -> Option<usize> {
        self.operators.iter().position(|o| o.name == name)
    }

    pub fn inbound(&self, op: usize) -> impl Iterator<Item = (usize, &DagEdge)> {
        self.edges.iter().enumerate().filter(move |(_, e)| e.to == op)
    }

    pub fn outbound(&self, op: usize) -> impl Iterator<Item = (usize, &DagEdge)> {
        self.edges.iter().enumerate().filter(move |(_, e)| e.from == op)
    }

    /// Operators in an order where every edge points forward.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.operators.len();
        let mut indegree = vec![0usize; n];
        for e in &self.edges {
            indegree[e.to] += 1;
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        ready.reverse();
        let mut order = Vec::with_capacity(n);
        while let Some(op) = ready.pop() {
            order.push(op);
            let mut next: Vec<usize> = Vec::new();
            for e in self.edges.iter().filter(|e| e.from == op) {
                indegree[e.to] -= 1;
                if indegree[e.to] == 0 {
                    next.push(e.to);
                }
            }
            next.sort_unstable_by(|a, b| b.cmp(a));
            ready.extend(next);
        }
        if order.len() != n {
            let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
            return Err(Error::CyclicDag(self.operators[stuck].name.clone()));
        }
        Ok(order)
    }

    pub fn validate(&self) -> Result<()> {
        if self.operators.is_empty() {
            return Err(Error::InvalidDag("no operators".into()));
        }
        for (i, op) in self.operators.iter().enumerate() {
            if self.operators[..i].iter().any(|o| o.name == op.name) {
                return Err(Error::InvalidDag(format!("duplicate operator name `{}`", op.name)));
            }
            if op.parallelism == 0 {
                return Err(Error::InvalidDag(format!("`{}` has zero parallelism", op.name)));
            }
            let has_in = self.inbound(i).next().is_some();
            let has_out = self.outbound(i).next().is_some();
            match op.kind {
                OperatorKind::Source if has_in => {
                    return Err(Error::InvalidDag(format!("source `{}` has inputs", op.name)))
                }
                OperatorKind::Sink if has_out => {
                    return Err(Error::InvalidDag(format!("sink `{}` has outputs", op.name)))
                }
                OperatorKind::Transform | OperatorKind::Sink if !has_in => {
                    return Err(Error::InvalidDag(format!("`{}` is not reachable from a source", op.name)))
                }
                OperatorKind::Transform | OperatorKind::Source if !has_out => {
                    return Err(Error::InvalidDag(format!("`{}` does not lead to a sink", op.name)))
                }
                _ => {}
            }
            if op.kind != OperatorKind::Source && !(op.service_rate.is_finite() && op.service_rate > 0.0) {
                return Err(Error::InvalidDag(format!("`{}` needs a positive service rate", op.name)));
            }
            if !(op.selectivity.is_finite() && op.selectivity >= 0.0) {
                return Err(Error::InvalidDag(format!("`{}` has a negative selectivity", op.name)));
            }
            if has_out && !(op.out_tuple_size.is_finite() && op.out_tuple_size > 0.0) {
                return Err(Error::InvalidDag(format!("`{}` needs a positive out_tuple_size", op.name)));
            }
            if let JoinMode::Latest { primary } = &op.join {
                let ok = self.inbound(i).any(|(_, e)| self.operators[e.from].name == *primary);
                if !ok {
                    return Err(Error::InvalidDag(format!(
                        "`{}` joins on `{primary}`, which is not one of its inputs",
                        op.name
                    )));
                }
            }
        }
        for e in &self.edges {
            match e.grouping {
                Grouping::KeyBased { key_count, skew } => {
                    if key_count == 0 {
                        return Err(Error::InvalidDag("key_count must be at least 1".into()));
                    }
                    if !(skew.is_finite() && skew >= 0.0) {
                        return Err(Error::InvalidDag("zipf skew must be non-negative".into()));
                    }
                }
                Grouping::Global { target_index } => {
                    let op = &self.operators[e.to];
                    if target_index >= op.parallelism {
                        return Err(Error::GlobalTargetOutOfRange {
                            operator: op.name.clone(),
                            target: target_index,
                            parallelism: op.parallelism,
                        });
                    }
                }
                Grouping::Shuffle | Grouping::All => {}
            }
        }
        self.topological_order().map(|_| ())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstanceId(pub usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub op: usize,
    pub replica: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceEdge {
    pub src: InstanceId,
    pub dst: InstanceId,
    /// Index of the DAG edge this instance pair realizes.
    pub dag_edge: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceGraph {
    pub dag: AppDag,
    pub instances: Vec<Instance>,
    pub edges: Vec<InstanceEdge>,
    op_offsets: Vec<usize>,
}

impl InstanceGraph {
    pub fn instance_of(&self, op: usize, replica: usize) -> InstanceId {
        InstanceId(self.op_offsets[op] + replica)
    }

    pub fn instances_of(&self, op: usize) -> impl Iterator<Item = InstanceId> + '_ {
        (0..self.dag.operators[op].parallelism).map(move |r| self.instance_of(op, r))
    }

    pub fn name(&self, id: InstanceId) -> String {
        let inst = &self.instances[id.0];
        format!("{}#{}", self.dag.operators[inst.op].name, inst.replica)
    }

    pub fn find(&self, name: &str) -> Option<InstanceId> {
        (0..self.instances.len()).map(InstanceId).find(|&i| self.name(i) == name)
    }
}

/// Expands every operator into its replicas and every DAG edge into the
/// instance pairs its grouping policy can use.
pub fn expand(dag: &AppDag) -> Result<InstanceGraph> {
    dag.validate()?;
    let mut op_offsets = Vec::with_capacity(dag.operators.len());
    let mut instances = Vec::new();
    for (op, operator) in dag.operators.iter().enumerate() {
        op_offsets.push(instances.len());
        instances.extend((0..operator.parallelism).map(|replica| Instance { op, replica }));
    }
    let mut edges = Vec::new();
    for (ei, e) in dag.edges.iter().enumerate() {
        let up = dag.operators[e.from].parallelism;
        let down = dag.operators[e.to].parallelism;
        for u in 0..up {
            let src = InstanceId(op_offsets[e.from] + u);
            let targets: Vec<usize> = match e.grouping {
                Grouping::Global { target_index } => vec![target_index],
                Grouping::Shuffle | Grouping::KeyBased { .. } | Grouping::All => (0..down).collect(),
            };
            edges.extend(targets.into_iter().map(|d| InstanceEdge {
                src,
                dst: InstanceId(op_offsets[e.to] + d),
                dag_edge: ei,
            }));
        }
    }
    Ok(InstanceGraph { dag: dag.clone(), instances, edges, op_offsets })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Placement {
    pub assignment: Vec<MachineId>,
}

impl Placement {
    pub fn machine(&self, id: InstanceId) -> MachineId {
        self.assignment[id.0]
    }
}

/// Assigns instances in operator-declaration order, cycling through `machines`.
pub fn place_round_robin(g: &InstanceGraph, machines: &[MachineId]) -> Result<Placement> {
    if machines.is_empty() {
        return Err(Error::Placement("machine list is empty".into()));
    }
    Ok(Placement { assignment: (0..g.instances.len()).map(|i| machines[i % machines.len()]).collect() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Flow {
    pub id: FlowId,
    pub app: usize,
    pub src_instance: InstanceId,
    pub dst_instance: InstanceId,
    pub src_machine: MachineId,
    pub dst_machine: MachineId,
    pub is_internal: bool,
    /// Empty for internal flows.
    pub route: Route,
    pub dag_edge: usize,
}

/// Flow membership of every link, indexed by link id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinkFlowSets {
    members: Vec<Vec<FlowId>>,
    kinds: Vec<LinkKind>,
}

impl LinkFlowSets {
    pub fn from_flows(topology: &Topology, flows: &[Flow]) -> Self {
        let mut members = vec![Vec::new(); topology.links().len()];
        for f in flows.iter().filter(|f| !f.is_internal) {
            for l in &f.route.link_ids {
                members[l.0].push(f.id);
            }
        }
        LinkFlowSets { members, kinds: topology.links().iter().map(|l| l.kind).collect() }
    }

    pub fn link_count(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self, link: LinkId) -> &[FlowId] {
        &self.members[link.0]
    }

    pub fn kind(&self, link: LinkId) -> LinkKind {
        self.kinds[link.0]
    }

    /// Non-empty sets of the given kind as `(link, members)`.
    pub fn of_kind(&self, kind: LinkKind) -> impl Iterator<Item = (LinkId, &[FlowId])> {
        self.members
            .iter()
            .enumerate()
            .filter(move |(i, m)| self.kinds[*i] == kind && !m.is_empty())
            .map(|(i, m)| (LinkId(i), m.as_slice()))
    }

    pub fn internal(&self) -> impl Iterator<Item = (LinkId, &[FlowId])> {
        self.members
            .iter()
            .enumerate()
            .filter(move |(i, m)| self.kinds[*i].is_internal() && !m.is_empty())
            .map(|(i, m)| (LinkId(i), m.as_slice()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (LinkId, &[FlowId])> {
        self.members.iter().enumerate().map(|(i, m)| (LinkId(i), m.as_slice()))
    }
}

/// One flow per instance edge; flows between co-located instances are
/// internal and carry no route. Ids start at `first_id`.
pub fn flow_map(
    g: &InstanceGraph,
    p: &Placement,
    t: &Topology,
    app: usize,
    first_id: usize,
) -> Result<(Vec<Flow>, LinkFlowSets)> {
    if p.assignment.len() != g.instances.len() {
        return Err(Error::Placement(format!(
            "placement covers {} of {} instances",
            p.assignment.len(),
            g.instances.len()
        )));
    }
    if let Some(m) = p.assignment.iter().find(|m| !t.contains(**m)) {
        return Err(Error::Placement(format!("instance placed on unknown machine {m}")));
    }
    let flows = g
        .edges
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let (s, d) = (p.machine(e.src), p.machine(e.dst));
            let is_internal = s == d;
            let route = if is_internal { Route::default() } else { t.route(s, d)?.clone() };
            Ok(Flow {
                id: FlowId(first_id + i),
                app,
                src_instance: e.src,
                dst_instance: e.dst,
                src_machine: s,
                dst_machine: d,
                is_internal,
                route,
                dag_edge: e.dag_edge,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sets = LinkFlowSets::from_flows(t, &[]);
    for f in flows.iter().filter(|f| !f.is_internal) {
        for l in &f.route.link_ids {
            sets.members[l.0].push(f.id);
        }
    }
    Ok((flows, sets))
}
