//! Deterministic fluid simulation. Time advances in sample periods; within a
//! period instances are visited in topological order and every event keeps
//! its exact continuous timestamp, so a tuple may cross several hops in one
//! period.

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::allocator::{self, violations, AllocatorChoice, EpochInput, FairnessConfig};
use crate::app::{flow_map, Flow, Grouping, JoinMode, LinkFlowSets, OperatorKind};
use crate::error::{Error, Result};
use crate::profiler::{FlowCounters, FlowState, IntervalClock, Profiler, MB};
use crate::scenario::Scenario;
use crate::topology::{LinkId, Topology};

use super::metrics::{collect_metrics, Recorder, Summary};
use super::workload::{seeded, ArrivalClock, KeySampler};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimConfig {
    pub duration: f64,
    pub sample_period: f64,
    pub delta_t: f64,
    pub seed: u64,
    pub allocator: AllocatorChoice,
    pub warmup_epochs: usize,
    pub fairness: FairnessConfig,
}

impl SimConfig {
    /// Settings taken from the scenario file for one allocator.
    pub fn from_scenario(s: &Scenario, allocator: AllocatorChoice) -> Self {
        SimConfig {
            duration: s.sim.duration,
            sample_period: s.sim.sample_period,
            delta_t: s.sim.delta_t,
            seed: s.sim.seed,
            allocator,
            warmup_epochs: s.sim.warmup_epochs,
            fairness: s.fairness.config(s.fairness.alpha),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Tuple {
    /// Emit time at the source this tuple descends from.
    lineage: f64,
    size: u64,
    /// Enqueue time at the sender, or arrival time at the receiver.
    at: f64,
}

#[derive(Clone, Debug)]
struct FlowRt {
    send: VecDeque<Tuple>,
    recv: VecDeque<Tuple>,
    /// Bytes of the head tuple already on the wire.
    head_sent: f64,
    /// Time the flow's share of the link is next free.
    cursor: f64,
    counters: FlowCounters,
    /// Highest lineage consumed by the receiver.
    consumed_lineage: f64,
    /// Bytes moved across the route this sample period.
    carried: f64,
    internal: bool,
    /// False for reference inputs of a `Latest` join.
    primary: bool,
}

#[derive(Clone, Debug)]
struct OutEdge {
    grouping: Grouping,
    /// Flow index per target replica; `None` where no flow exists.
    targets: Vec<Option<usize>>,
    next: usize,
    keys: Option<KeySampler>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Join {
    None,
    Latest,
    Aligned,
}

#[derive(Clone, Debug)]
struct InstanceRt {
    app: usize,
    kind: OperatorKind,
    service_time: f64,
    selectivity: f64,
    out_size: u64,
    join: Join,
    inbound: Vec<usize>,
    out: Vec<OutEdge>,
    busy_until: f64,
    selectivity_acc: f64,
    /// Lowest lineage consumed from reference inputs of a `Latest` join;
    /// infinite until the first one.
    reference_lineage: f64,
    source: Option<ArrivalClock>,
    rng: ChaCha8Rng,
}

/// Per-epoch snapshot kept for inspection by callers.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochTrace {
    pub t: f64,
    pub states: Vec<FlowState>,
    /// Rates in force for the epoch that starts at `t`.
    pub rates: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub summary: Summary,
    pub flows: Vec<Flow>,
    pub epochs: Vec<EpochTrace>,
    pub flow_states_csv: String,
    pub allocations_csv: String,
    pub samples_csv: String,
    pub groups_csv: Option<String>,
}

impl RunOutput {
    pub fn write(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("flow_states.csv"), &self.flow_states_csv)?;
        std::fs::write(dir.join("allocations.csv"), &self.allocations_csv)?;
        std::fs::write(dir.join("samples.csv"), &self.samples_csv)?;
        if let Some(g) = &self.groups_csv {
            std::fs::write(dir.join("groups.csv"), g)?;
        }
        let mut json = serde_json::to_string_pretty(&self.summary)?;
        json.push('\n');
        std::fs::write(dir.join("summary.json"), json)?;
        Ok(())
    }
}

struct World {
    topology: Topology,
    capacities: Vec<f64>,
    flows: Vec<Flow>,
    sets: LinkFlowSets,
    rt: Vec<FlowRt>,
    instances: Vec<InstanceRt>,
    order: Vec<usize>,
    app_names: Vec<String>,
    /// Largest tuple on each flow, bytes.
    max_tuple: Vec<u64>,
}

fn build_world(scenario: &Scenario, capacity_mbps: Option<f64>, seed: u64) -> Result<World> {
    let topology = scenario.build_topology(capacity_mbps)?;
    let capacities = scenario.allocatable(&topology);
    let apps = scenario.built_apps()?;
    let mut flows = Vec::new();
    let mut instances: Vec<InstanceRt> = Vec::new();
    let mut order = Vec::new();
    let mut max_tuple = Vec::new();

    for (a, app) in apps.iter().enumerate() {
        let g = &app.graph;
        let dag = &g.dag;
        let (app_flows, _) = flow_map(g, &app.placement, &topology, a, flows.len())?;
        let base = instances.len();
        for (i, inst) in g.instances.iter().enumerate() {
            let op = &dag.operators[inst.op];
            let join = match op.join {
                JoinMode::None => Join::None,
                JoinMode::Latest { .. } => Join::Latest,
                JoinMode::Aligned => Join::Aligned,
            };
            let stream = ((a as u64) << 32) | (i as u64);
            let mut rng = seeded(seed, stream);
            let source = match op.kind {
                OperatorKind::Source => {
                    let w = app.workload.iter().find(|w| w.operator == op.name);
                    Some(match w {
                        Some(w) => ArrivalClock::new(w.arrival, w.rate, w.pause, &mut rng),
                        None => ArrivalClock::new(Default::default(), 0.0, None, &mut rng),
                    })
                }
                _ => None,
            };
            let out = dag
                .outbound(inst.op)
                .map(|(e, edge)| {
                    let par = dag.operators[edge.to].parallelism;
                    let mut targets = vec![None; par];
                    for f in &app_flows {
                        if f.dag_edge == e && f.src_instance.0 == i {
                            targets[g.instances[f.dst_instance.0].replica] = Some(f.id.0);
                        }
                    }
                    let keys = match edge.grouping {
                        Grouping::KeyBased { key_count, skew } => Some(KeySampler::new(key_count, skew)?),
                        _ => None,
                    };
                    Ok(OutEdge { grouping: edge.grouping.clone(), targets, next: 0, keys })
                })
                .collect::<Result<Vec<_>>>()?;
            instances.push(InstanceRt {
                app: a,
                kind: op.kind,
                service_time: if op.service_rate > 0.0 { 1.0 / op.service_rate } else { 0.0 },
                selectivity: op.selectivity,
                out_size: ((op.out_tuple_size * MB).round() as u64).max(1),
                join,
                inbound: Vec::new(),
                out,
                busy_until: 0.0,
                selectivity_acc: 0.0,
                reference_lineage: f64::INFINITY,
                source,
                rng,
            });
        }
        for f in &app_flows {
            instances[base + f.dst_instance.0].inbound.push(f.id.0);
            max_tuple.push(instances[base + f.src_instance.0].out_size);
        }
        for op in dag.topological_order()? {
            order.extend(g.instances_of(op).map(|id| base + id.0));
        }
        flows.extend(app_flows);
    }

    let mut rt: Vec<FlowRt> = flows
        .iter()
        .map(|f| FlowRt {
            send: VecDeque::new(),
            recv: VecDeque::new(),
            head_sent: 0.0,
            cursor: 0.0,
            counters: FlowCounters::default(),
            consumed_lineage: f64::NEG_INFINITY,
            carried: 0.0,
            internal: f.is_internal,
            primary: true,
        })
        .collect();
    // Mark reference inputs of Latest joins.
    for (a, app) in apps.iter().enumerate() {
        let dag = &app.graph.dag;
        for f in flows.iter().filter(|f| f.app == a) {
            let dst_op = &dag.operators[app.graph.instances[f.dst_instance.0].op];
            if let JoinMode::Latest { primary } = &dst_op.join {
                let from = &dag.operators[dag.edges[f.dag_edge].from].name;
                rt[f.id.0].primary = from == primary;
            }
        }
    }
    let sets = LinkFlowSets::from_flows(&topology, &flows);
    Ok(World {
        topology,
        capacities,
        flows,
        sets,
        rt,
        instances,
        order,
        app_names: apps.iter().map(|a| a.name.clone()).collect(),
        max_tuple,
    })
}

impl World {
    fn enqueue(&mut self, flow: usize, tuple: Tuple, rec: &mut Recorder) {
        let f = &mut self.rt[flow];
        f.counters.send_bytes += tuple.size;
        f.counters.generated += tuple.size;
        f.send.push_back(tuple);
        rec.created[self.flows[flow].app] += 1;
    }

    /// Routes one output of instance `i` onto each outbound edge.
    fn emit(&mut self, i: usize, lineage: f64, at: f64, rec: &mut Recorder) {
        let size = self.instances[i].out_size;
        let tuple = Tuple { lineage, size, at };
        for e in 0..self.instances[i].out.len() {
            let inst = &mut self.instances[i];
            let edge = &mut inst.out[e];
            let n = edge.targets.len();
            let chosen: Vec<usize> = match &edge.grouping {
                Grouping::Shuffle => {
                    let r = edge.next % n;
                    edge.next += 1;
                    edge.targets[r].into_iter().collect()
                }
                Grouping::KeyBased { .. } => {
                    let key = edge.keys.as_ref().expect("sampler for key-based edge").sample(&mut inst.rng);
                    edge.targets[Grouping::key_target(key, n)].into_iter().collect()
                }
                Grouping::Global { target_index } => edge.targets[*target_index].into_iter().collect(),
                Grouping::All => edge.targets.iter().flatten().copied().collect(),
            };
            for f in chosen {
                self.enqueue(f, tuple, rec);
            }
        }
    }

    /// Moves bytes of `flow` during `[t0, t1)` at `rate` MB/s.
    fn transfer(&mut self, flow: usize, rate: f64, t0: f64, t1: f64) {
        let f = &mut self.rt[flow];
        if f.internal {
            while f.send.front().is_some_and(|h| h.at < t1) {
                let h = f.send.pop_front().unwrap();
                f.counters.send_bytes -= h.size;
                f.counters.delivered += h.size;
                f.counters.recv_bytes += h.size;
                f.recv.push_back(h);
            }
            return;
        }
        let bps = rate * MB;
        if !(bps > 0.0) {
            return;
        }
        let mut cursor = f.cursor.max(t0);
        while let Some(h) = f.send.front().copied() {
            let start = cursor.max(h.at);
            if start >= t1 {
                break;
            }
            let remaining = h.size as f64 - f.head_sent;
            let finish = start + remaining / bps;
            if finish <= t1 {
                f.carried += remaining;
                f.send.pop_front();
                f.head_sent = 0.0;
                f.counters.send_bytes -= h.size;
                f.counters.delivered += h.size;
                f.counters.recv_bytes += h.size;
                f.recv.push_back(Tuple { at: finish, ..h });
                cursor = finish;
            } else {
                let moved = (t1 - start) * bps;
                f.carried += moved;
                f.head_sent += moved;
                cursor = t1;
                break;
            }
        }
        f.cursor = cursor;
    }

    /// Next tuple instance `i` may consume: `(flow, start time)`.
    fn candidate(&self, i: usize) -> Option<(usize, f64)> {
        let inst = &self.instances[i];
        let busy = inst.busy_until;
        let heads = inst.inbound.iter().filter_map(|&f| self.rt[f].recv.front().map(|h| (f, *h)));
        match inst.join {
            Join::None => {
                heads.min_by(|a, b| a.1.at.total_cmp(&b.1.at).then(a.0.cmp(&b.0))).map(|(f, h)| (f, busy.max(h.at)))
            }
            // A primary tuple older than every reference joins with the
            // earliest one; otherwise a reference at least as old must exist.
            Join::Latest => heads
                .filter(|(f, _)| !self.rt[*f].primary || inst.reference_lineage.is_finite())
                .min_by(|a, b| a.1.at.total_cmp(&b.1.at).then(a.0.cmp(&b.0)))
                .map(|(f, h)| (f, busy.max(h.at))),
            Join::Aligned => {
                let (c, head) = heads.min_by(|a, b| a.1.lineage.total_cmp(&b.1.lineage).then(a.0.cmp(&b.0)))?;
                let mut start = busy.max(head.at);
                for &j in &inst.inbound {
                    if j == c || self.rt[j].consumed_lineage >= head.lineage {
                        continue;
                    }
                    // The head of j has lineage >= head.lineage, as head is the minimum.
                    start = start.max(self.rt[j].recv.front()?.at);
                }
                Some((c, start))
            }
        }
    }

    fn process(&mut self, i: usize, t1: f64, rec: &mut Recorder) {
        while let Some((f, start)) = self.candidate(i) {
            if start >= t1 {
                break;
            }
            let fr = &mut self.rt[f];
            let tuple = fr.recv.pop_front().unwrap();
            fr.counters.recv_bytes -= tuple.size;
            fr.counters.processed += tuple.size;
            fr.consumed_lineage = fr.consumed_lineage.max(tuple.lineage);
            let primary = fr.primary;
            let app = self.instances[i].app;
            rec.consumed[app] += 1;

            let inst = &mut self.instances[i];
            let finish = start + inst.service_time;
            inst.busy_until = finish;
            if inst.join == Join::Latest && !primary {
                inst.reference_lineage = inst.reference_lineage.min(tuple.lineage);
                continue;
            }
            if inst.kind == OperatorKind::Sink {
                rec.completion(app, finish, finish - tuple.lineage);
                continue;
            }
            inst.selectivity_acc += inst.selectivity;
            let n = inst.selectivity_acc.floor();
            inst.selectivity_acc -= n;
            for _ in 0..n as usize {
                self.emit(i, tuple.lineage, finish, rec);
            }
        }
    }

    fn step(&mut self, rates: &[f64], t0: f64, t1: f64, rec: &mut Recorder) {
        for k in 0..self.order.len() {
            let i = self.order[k];
            for j in 0..self.instances[i].inbound.len() {
                let f = self.instances[i].inbound[j];
                self.transfer(f, rates[f], t0, t1);
            }
            if self.instances[i].source.is_some() {
                loop {
                    let inst = &mut self.instances[i];
                    let clock = inst.source.as_mut().unwrap();
                    let Some(t) = clock.next_before(t1, &mut inst.rng) else { break };
                    self.emit(i, t, t, rec);
                }
            } else {
                self.process(i, t1, rec);
            }
        }
    }

    fn counters(&self) -> Vec<FlowCounters> {
        self.rt.iter().map(|f| f.counters).collect()
    }
}

/// Runs one cell: the scenario at one bottleneck capacity under one
/// allocator configuration.
pub fn run(scenario: &Scenario, capacity_mbps: Option<f64>, cfg: &SimConfig) -> Result<RunOutput> {
    let clock = IntervalClock::new(cfg.sample_period, cfg.delta_t)?;
    if !(cfg.duration > 0.0) {
        return Err(Error::Validation(vec![format!("duration must be positive, got {}", cfg.duration)]));
    }
    let mut world = build_world(scenario, capacity_mbps, cfg.seed)?;
    let app_count = world.app_names.len();
    let mut policy = allocator::build(cfg.allocator, cfg.fairness, app_count);
    let mut rec = Recorder::new(scenario, capacity_mbps, cfg, &world.app_names, &world.topology, &world.sets);

    let mut rates = policy.initial(&world.flows, &world.sets, &world.capacities).rates;
    rec.allocation(0.0, &rates);
    rec.check_feasibility(&world.sets, &world.capacities, &rates);
    let mut profiler = Profiler::new(world.flows.len());
    profiler.begin_interval(&world.counters(), 0.0);
    let mut epoch_start_counters = world.counters();
    let mut epochs = Vec::new();

    let spe = clock.samples_per_epoch();
    let steps = (cfg.duration / cfg.sample_period).round() as usize;
    for k in 0..steps {
        let t0 = k as f64 * cfg.sample_period;
        let t1 = (k + 1) as f64 * cfg.sample_period;
        world.step(&rates, t0, t1, &mut rec);
        let carried: Vec<f64> = world.rt.iter_mut().map(|f| std::mem::take(&mut f.carried)).collect();
        rec.sample(t0, cfg.sample_period, &world.sets, &world.capacities, &carried, &world.max_tuple);

        if (k + 1) % spe == 0 && k + 1 < steps {
            let counters = world.counters();
            let records = profiler.end_interval(&counters, t1);
            rec.check_identities(&epoch_start_counters, &counters);
            let states: Vec<FlowState> = records.iter().map(|r| r.state).collect();
            rec.flow_states(t1, &states);
            let input = EpochInput {
                flows: &world.flows,
                sets: &world.sets,
                states: &states,
                capacities: &world.capacities,
                prior: &rates,
                t: t1,
                dt: cfg.delta_t,
            };
            let decision = policy.decide(&input)?;
            rec.bottlenecks(t1, &decision.bottlenecks);
            if let Some(g) = &decision.groups {
                rec.groups(t1, g);
            }
            rates = decision.allocation.rates;
            if let Some((flow, rate)) = rates.iter().enumerate().find(|(_, r)| !r.is_finite()) {
                return Err(Error::NonFiniteRate { flow, rate: *rate });
            }
            rec.allocation(t1, &rates);
            rec.check_feasibility(&world.sets, &world.capacities, &rates);
            epochs.push(EpochTrace { t: t1, states, rates: rates.clone() });
            profiler.begin_interval(&counters, t1);
            epoch_start_counters = counters;
        }
    }

    let resident: Vec<u64> = (0..app_count)
        .map(|a| {
            world
                .rt
                .iter()
                .zip(&world.flows)
                .filter(|(_, f)| f.app == a)
                .map(|(r, _)| (r.send.len() + r.recv.len()) as u64)
                .sum()
        })
        .collect();
    let (summary, csv) = collect_metrics(rec, &resident, &world.topology);
    Ok(RunOutput {
        summary,
        flows: world.flows,
        epochs,
        flow_states_csv: csv.flow_states,
        allocations_csv: csv.allocations,
        samples_csv: csv.samples,
        groups_csv: csv.groups,
    })
}

/// Links carrying at least one external flow.
pub fn used_links(sets: &LinkFlowSets) -> Vec<LinkId> {
    sets.iter().filter(|(_, m)| !m.is_empty()).map(|(l, _)| l).collect()
}

pub(crate) fn violation_split(sets: &LinkFlowSets, caps: &[f64], rates: &[f64]) -> (usize, usize) {
    let v = violations(sets, caps, rates);
    let internal = v.iter().filter(|l| sets.kind(**l).is_internal()).count();
    (v.len(), internal)
}
