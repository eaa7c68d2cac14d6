use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::queue::EventQueue;
use super::summary::{CommitRecord, NodeSummary, RunSummary, VertexRecord};
use super::{ms_to_us, SimConfig, SimFlags, DUPLICATE_PROBABILITY};
use crate::concrete::{ConcreteAction, ConcreteStep, ConcreteTrace, StateDelta};
use crate::consensus::{Node, NodeParams, Vertex};
use crate::error::{ConfigError, SimError};
use crate::trace::{AbstractState, LeaderEntry, NodeId, Round, VertexId};

#[derive(Clone, Debug)]
enum Payload {
    TimerFire(NodeId),
    AdvanceRound(NodeId),
    CommitNext(NodeId),
    Deliver {
        from: NodeId,
        to: NodeId,
        vertex: Arc<Vertex>,
    },
    EquivocationInject {
        node: NodeId,
        round: Round,
    },
    ReconfigureAdd(NodeId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetEvent {
    Send,
    Deliver,
    DropCrashed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetRecord {
    pub time: u64,
    pub event: NetEvent,
    pub from: NodeId,
    pub to: NodeId,
    pub round: Round,
    pub vertex: VertexId,
}

/// An externally requested step, used when the model drives the simulator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Command {
    Advance(NodeId),
    Deliver {
        from: NodeId,
        to: NodeId,
        vertex: VertexId,
    },
    Commit(NodeId),
    Equivocate { node: NodeId, round: Round },
    Reconfigure(NodeId),
}

/// Result of a free-running simulation.
#[derive(Clone, Debug)]
pub struct SimRun {
    pub trace: ConcreteTrace,
    pub summary: RunSummary,
    pub network: Vec<NetRecord>,
}

type Pending = BTreeMap<(NodeId, NodeId, VertexId), Arc<Vertex>>;

/// A simulation instance. Strictly single-threaded; every random draw comes
/// from one seeded stream consumed in event order.
pub struct Simulation {
    cfg: SimConfig,
    flags: SimFlags,
    iteration_us: u64,
    delay_us: u64,
    queue: EventQueue<Payload>,
    rng: ChaCha8Rng,
    nodes: BTreeMap<NodeId, Node>,
    genesis_set: Vec<NodeId>,
    faulty: BTreeSet<NodeId>,
    crashed: BTreeSet<NodeId>,
    trace: ConcreteTrace,
    network: Vec<NetRecord>,
    /// Driven mode: sent but not yet delivered messages.
    pending: Option<Pending>,
    vertices: BTreeMap<VertexId, VertexRecord>,
    commit_times: BTreeMap<NodeId, Vec<u64>>,
    equivocation_plan: BTreeSet<(NodeId, Round)>,
    reconfigure_scheduled: bool,
    stopping: bool,
}

impl Simulation {
    fn build(cfg: &SimConfig, flags: SimFlags, driven: bool) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let stakes = cfg.stake_table();
        let genesis_set: Vec<NodeId> = (0..cfg.num_nodes).collect();
        let mut sim = Simulation {
            cfg: cfg.clone(),
            flags,
            iteration_us: ms_to_us(cfg.iteration_duration_ms),
            delay_us: ms_to_us(cfg.message_send_delay_ms) + ms_to_us(cfg.message_receive_delay_ms),
            queue: EventQueue::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            nodes: BTreeMap::new(),
            genesis_set: genesis_set.clone(),
            faulty: cfg.faulty_nodes().into_iter().collect(),
            crashed: BTreeSet::new(),
            trace: ConcreteTrace::new(cfg.seed, cfg.id(), Vec::new(), cfg.faulty_nodes()),
            network: Vec::new(),
            pending: driven.then(BTreeMap::new),
            vertices: BTreeMap::new(),
            commit_times: BTreeMap::new(),
            equivocation_plan: cfg.equivocations.iter().map(|e| (e.node, e.round)).collect(),
            reconfigure_scheduled: false,
            stopping: false,
        };
        let mut init: Vec<StateDelta> = Vec::new();
        for &p in &genesis_set {
            let node = sim.new_node(p, stakes.clone());
            init.extend(node.init_deltas());
            sim.record_vertex(&node.genesis());
            sim.nodes.insert(p, node);
        }
        sim.trace = ConcreteTrace::new(cfg.seed, cfg.id(), init, cfg.faulty_nodes());
        for p in genesis_set {
            let g = sim.nodes[&p].genesis();
            sim.engine_step(ConcreteAction::new("impl.broadcast").with("node", p).with("vertex", g.id), vec![]);
            sim.broadcast_created(p, g);
        }
        Ok(sim)
    }

    fn new_node(&self, id: NodeId, stakes: BTreeMap<NodeId, u64>) -> Node {
        Node::new(NodeParams {
            id,
            stakes,
            leader_set: self.genesis_set.clone(),
            max_rounds: self.cfg.max_rounds,
            production_rate: self.cfg.vertex_production_rate,
            flags: self.flags.imp,
        })
    }

    /// A simulation whose steps are requested one at a time through
    /// [`Simulation::execute`]. No timers run and messages wait in a pending
    /// pool until a command delivers them.
    pub fn driven(cfg: &SimConfig, flags: SimFlags) -> Result<Self, ConfigError> {
        Simulation::build(cfg, flags, true)
    }

    /// Runs to the stop condition: every live node at `max_rounds` (then
    /// in-flight messages drain and a final commit sweep runs), or the
    /// virtual time limit.
    pub fn run(cfg: &SimConfig, flags: SimFlags) -> Result<SimRun, ConfigError> {
        let mut sim = Simulation::build(cfg, flags, false)?;
        let stagger = (cfg.start_stagger_iterations * sim.iteration_us as f64) as u64;
        let ids: Vec<NodeId> = sim.nodes.keys().copied().collect();
        for p in ids {
            let offset = if stagger > 0 { sim.rng.gen_range(0..stagger) } else { 0 };
            sim.schedule(sim.iteration_us + offset, Payload::TimerFire(p));
        }
        let limit = ms_to_us(cfg.max_virtual_time_ms);
        while let Some(t) = sim.queue.peek_time() {
            if t > limit {
                break;
            }
            let e = sim.queue.pop().expect("peeked");
            sim.handle(e.payload).expect("free-run events target known nodes");
        }
        let live: Vec<NodeId> = sim.live_nodes().collect();
        for p in live {
            sim.nodes.get_mut(&p).unwrap().try_commit_all();
            sim.flush(p);
        }
        Ok(sim.finish())
    }

    fn schedule(&mut self, at: u64, p: Payload) {
        self.queue
            .schedule(at, p)
            .expect("the engine only schedules at or after the current time");
    }

    pub fn now(&self) -> u64 {
        self.queue.now()
    }

    fn live_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied().filter(|p| !self.crashed.contains(p))
    }

    fn record_vertex(&mut self, v: &Vertex) {
        let now = self.queue.now();
        self.vertices.entry(v.id).or_insert(VertexRecord {
            id: v.id,
            creator: v.creator,
            round: v.round,
            created_us: now,
            payload_count: v.payload_count,
        });
    }

    fn engine_step(&mut self, action: ConcreteAction, delta: Vec<StateDelta>) {
        self.trace.steps.push(ConcreteStep {
            time: self.queue.now(),
            action,
            delta,
        });
    }

    /// Moves a node's journal into the trace.
    fn flush(&mut self, p: NodeId) {
        let now = self.queue.now();
        let journal = self.nodes.get_mut(&p).unwrap().take_journal();
        for (action, delta) in journal {
            if action.kind == "impl.commit_leader" {
                self.commit_times.entry(p).or_default().push(now);
            }
            self.trace.steps.push(ConcreteStep {
                time: now,
                action,
                delta,
            });
        }
    }

    fn send(&mut self, from: NodeId, to: NodeId, v: Arc<Vertex>) {
        let now = self.queue.now();
        self.network.push(NetRecord {
            time: now,
            event: NetEvent::Send,
            from,
            to,
            round: v.round,
            vertex: v.id,
        });
        if let Some(pending) = &mut self.pending {
            pending.insert((from, to, v.id), v);
            return;
        }
        let at = now + self.delay_us;
        if self.flags.duplicate_deliveries && self.rng.gen_bool(DUPLICATE_PROBABILITY) {
            self.schedule(at, Payload::Deliver { from, to, vertex: v.clone() });
        }
        self.schedule(at, Payload::Deliver { from, to, vertex: v });
    }

    /// Broadcast of a freshly created vertex; splits the peers between the
    /// vertex and an equivocating twin when the fault plan says so.
    fn broadcast_created(&mut self, p: NodeId, v: Arc<Vertex>) {
        self.record_vertex(&v);
        let peers: Vec<NodeId> = self.nodes.keys().copied().filter(|q| *q != p).collect();
        let twin = if self.equivocation_plan.remove(&(p, v.round)) {
            let t = self.nodes.get_mut(&p).unwrap().equivocate(v.round);
            self.flush(p);
            t
        } else {
            None
        };
        match twin {
            Some(t) => {
                self.record_vertex(&t);
                let half = peers.len() / 2;
                for (i, q) in peers.into_iter().enumerate() {
                    let which = if i < half { v.clone() } else { t.clone() };
                    self.send(p, q, which);
                }
            }
            None => {
                for q in peers {
                    self.send(p, q, v.clone());
                }
            }
        }
    }

    fn node_mut(&mut self, p: NodeId) -> Result<&mut Node, SimError> {
        self.nodes.get_mut(&p).ok_or(SimError::UnknownNode(p))
    }

    fn handle(&mut self, payload: Payload) -> Result<(), SimError> {
        let now = self.queue.now();
        match payload {
            Payload::TimerFire(p) => {
                if self.crashed.contains(&p) {
                    return Ok(());
                }
                if self.faulty.contains(&p) && self.rng.gen::<f64>() < self.cfg.failure_chance {
                    self.crashed.insert(p);
                    self.engine_step(ConcreteAction::new("impl.crash").with("node", p), vec![]);
                    return Ok(());
                }
                let created = self.node_mut(p)?.on_timer(now);
                self.flush(p);
                if let Some(v) = created {
                    self.broadcast_created(p, v);
                }
                self.maybe_reconfigure();
                if !self.stopping && self.all_live_at_max() {
                    self.stopping = true;
                }
                if !self.stopping {
                    self.schedule(now + self.iteration_us, Payload::TimerFire(p));
                }
            }
            Payload::AdvanceRound(p) => {
                let node = self.node_mut(p)?;
                let created = node.try_advance(now);
                self.flush(p);
                if let Some(v) = created {
                    self.broadcast_created(p, v);
                }
            }
            Payload::CommitNext(p) => {
                self.node_mut(p)?.try_commit_next();
                self.flush(p);
            }
            Payload::Deliver { from, to, vertex } => {
                if self.crashed.contains(&to) || !self.nodes.contains_key(&to) {
                    self.network.push(NetRecord {
                        time: now,
                        event: NetEvent::DropCrashed,
                        from,
                        to,
                        round: vertex.round,
                        vertex: vertex.id,
                    });
                    return Ok(());
                }
                self.network.push(NetRecord {
                    time: now,
                    event: NetEvent::Deliver,
                    from,
                    to,
                    round: vertex.round,
                    vertex: vertex.id,
                });
                let driven = self.pending.is_some();
                let node = self.node_mut(to)?;
                node.on_receive(from, vertex);
                if !driven {
                    node.try_commit_all();
                }
                self.flush(to);
            }
            Payload::EquivocationInject { node, round } => {
                let twin = self.node_mut(node)?.equivocate(round);
                self.flush(node);
                if let Some(t) = twin {
                    self.record_vertex(&t);
                    let peers: Vec<NodeId> = self.nodes.keys().copied().filter(|q| *q != node).collect();
                    for q in peers {
                        self.send(node, q, t.clone());
                    }
                }
            }
            Payload::ReconfigureAdd(n) => {
                if self.flags.imp.no_reconfiguration || self.nodes.contains_key(&n) {
                    return Ok(());
                }
                for node in self.nodes.values_mut() {
                    node.set_stake(n, 1);
                }
                let mut stakes = self.cfg.stake_table();
                stakes.extend(self.nodes.keys().filter(|q| !stakes.contains_key(q)).map(|q| (*q, 1)).collect::<Vec<_>>());
                stakes.insert(n, 1);
                let fresh = self.new_node(n, stakes);
                let deltas = fresh.init_deltas();
                let genesis = fresh.genesis();
                self.nodes.insert(n, fresh);
                self.record_vertex(&genesis);
                self.engine_step(ConcreteAction::new("impl.admit_node").with("new_node", n), deltas);
                let existing: Vec<NodeId> = self.nodes.keys().copied().filter(|q| *q != n).collect();
                for q in existing {
                    if self.crashed.contains(&q) {
                        continue;
                    }
                    for v in self.nodes[&q].own_vertices() {
                        self.send(q, n, v);
                    }
                }
                self.broadcast_created(n, genesis);
                if self.pending.is_none() {
                    self.schedule(now + self.iteration_us, Payload::TimerFire(n));
                }
            }
        }
        Ok(())
    }

    fn all_live_at_max(&self) -> bool {
        self.live_nodes()
            .all(|p| self.nodes[&p].current_round() >= self.cfg.max_rounds)
    }

    fn maybe_reconfigure(&mut self) {
        let Some(r0) = self.cfg.reconfigure_round else { return };
        if self.reconfigure_scheduled {
            return;
        }
        if self.live_nodes().all(|p| self.nodes[&p].current_round() >= r0) {
            self.reconfigure_scheduled = true;
            let n = self.nodes.keys().next_back().map_or(0, |m| m + 1);
            let now = self.queue.now();
            self.schedule(now, Payload::ReconfigureAdd(n));
        }
    }

    /// Executes one externally requested step (driven mode) and runs the
    /// resulting events to quiescence. Returns the number of concrete steps
    /// produced, or why the command has no concrete counterpart.
    pub fn execute(&mut self, cmd: &Command) -> Result<usize, String> {
        let before = self.trace.steps.len();
        let now = self.queue.now();
        let known = |p: &NodeId| self.nodes.contains_key(p);
        let payload = match *cmd {
            Command::Advance(p) if known(&p) => Payload::AdvanceRound(p),
            Command::Commit(p) if known(&p) => Payload::CommitNext(p),
            Command::Equivocate { node, round } if known(&node) => Payload::EquivocationInject { node, round },
            Command::Reconfigure(n) => Payload::ReconfigureAdd(n),
            Command::Deliver { from, to, vertex } => {
                let pending = self.pending.as_mut().ok_or("simulation is not driven")?;
                let v = pending
                    .remove(&(from, to, vertex))
                    .ok_or_else(|| format!("no pending message {vertex:?} from {from} to {to}"))?;
                Payload::Deliver { from, to, vertex: v }
            }
            _ => return Err(format!("{cmd:?} names an unknown node")),
        };
        let at = match payload {
            Payload::AdvanceRound(_) | Payload::CommitNext(_) => now + self.iteration_us,
            Payload::Deliver { .. } => now + self.delay_us,
            _ => now,
        };
        self.schedule(at, payload);
        while let Some(e) = self.queue.pop() {
            self.handle(e.payload).map_err(|e| e.to_string())?;
        }
        Ok(self.trace.steps.len() - before)
    }

    pub fn trace(&self) -> &ConcreteTrace {
        &self.trace
    }

    pub fn network(&self) -> &[NetRecord] {
        &self.network
    }

    pub fn nodes(&self) -> &BTreeMap<NodeId, Node> {
        &self.nodes
    }

    pub fn faulty(&self) -> &BTreeSet<NodeId> {
        &self.faulty
    }

    /// Abstract state read directly off live node objects (not from the
    /// trace's deltas).
    pub fn snapshot(&self) -> AbstractState {
        let mut s = AbstractState::new(self.faulty.iter().copied());
        for (p, node) in &self.nodes {
            s.set_round(*p, node.exported_round());
            for (r, row) in node.local_dag() {
                for (q, v) in row {
                    s.insert_vertex(*p, *r, *q, v.id);
                }
            }
            for c in node.commits() {
                s.push_leader(*p, LeaderEntry { wave: c.wave, vertex: Some(c.leader) });
            }
        }
        s
    }

    pub fn summary(&self) -> RunSummary {
        let nodes = self
            .nodes
            .iter()
            .map(|(p, n)| {
                let times = self.commit_times.get(p).cloned().unwrap_or_default();
                NodeSummary {
                    id: *p,
                    faulty: self.faulty.contains(p),
                    crashed: self.crashed.contains(p),
                    round: n.current_round(),
                    equivocations_seen: n.equivocations_seen(),
                    commits: n
                        .commits()
                        .iter()
                        .zip(times)
                        .map(|(c, t)| CommitRecord {
                            wave: c.wave,
                            leader: c.leader,
                            block: c.block.clone(),
                            digest: c.digest,
                            time_us: t,
                        })
                        .collect(),
                }
            })
            .collect();
        RunSummary {
            seed: self.cfg.seed,
            config_id: self.cfg.id(),
            virtual_time_us: self.queue.now(),
            trace_steps: self.trace.steps.len(),
            nodes,
            vertices: self.vertices.values().cloned().collect(),
        }
    }

    fn finish(self) -> SimRun {
        let summary = self.summary();
        SimRun {
            trace: self.trace,
            summary,
            network: self.network,
        }
    }
}
