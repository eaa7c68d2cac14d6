use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use sha2::Digest as _;

use super::fields::{COMMIT_LOG, CURRENT_ROUND, LOCAL_DAG};
use super::linearize::linearize;
use super::{ImplFlags, Vertex};
use crate::concrete::{ConcreteAction, DeltaOp, StateDelta};
use crate::model::is_quorum;
use crate::trace::{block_digest, Digest, Hasher, NodeId, Round, VertexId, Wave};

#[derive(Clone, Debug)]
pub struct NodeParams {
    pub id: NodeId,
    pub stakes: BTreeMap<NodeId, u64>,
    /// Leader rotation order (the genesis node set).
    pub leader_set: Vec<NodeId>,
    pub max_rounds: Round,
    /// Vertices this node may create per second of virtual time.
    pub production_rate: u32,
    pub flags: ImplFlags,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Commit {
    pub wave: Wave,
    pub leader: VertexId,
    pub block: Vec<VertexId>,
    pub digest: Digest,
}

type Journal = Vec<(ConcreteAction, Vec<StateDelta>)>;

/// One protocol participant.
#[derive(Debug)]
pub struct Node {
    p: NodeParams,
    total_stake: u64,
    local_dag: BTreeMap<Round, BTreeMap<NodeId, Arc<Vertex>>>,
    by_id: HashMap<VertexId, Arc<Vertex>>,
    current_round: Round,
    exported_round: u64,
    buffer: Vec<Arc<Vertex>>,
    committed: Vec<Commit>,
    covered: HashSet<VertexId>,
    next_wave: Option<Wave>,
    own_equivocations: BTreeMap<Round, Arc<Vertex>>,
    equivocations_seen: u64,
    pending_increment: bool,
    window: (u64, u32),
    journal: Journal,
}

const WINDOW_US: u64 = 1_000_000;

impl Node {
    pub fn new(p: NodeParams) -> Self {
        let g = Arc::new(Vertex::genesis(p.id));
        let mut n = Node {
            total_stake: p.stakes.values().sum(),
            p,
            local_dag: BTreeMap::new(),
            by_id: HashMap::new(),
            current_round: 1,
            exported_round: 1,
            buffer: Vec::new(),
            committed: Vec::new(),
            covered: HashSet::new(),
            next_wave: Some(1),
            own_equivocations: BTreeMap::new(),
            equivocations_seen: 0,
            pending_increment: false,
            window: (0, 0),
            journal: Vec::new(),
        };
        n.by_id.insert(g.id, g.clone());
        n.local_dag.entry(1).or_default().insert(n.p.id, g);
        n
    }

    pub fn id(&self) -> NodeId {
        self.p.id
    }

    pub fn genesis(&self) -> Arc<Vertex> {
        self.local_dag[&1][&self.p.id].clone()
    }

    /// The initial state expressed as deltas.
    pub fn init_deltas(&self) -> Vec<StateDelta> {
        vec![
            self.delta(CURRENT_ROUND, DeltaOp::Set { value: 1 }),
            self.delta(
                LOCAL_DAG,
                DeltaOp::MapInsert {
                    round: 1,
                    creator: self.p.id,
                    vertex: self.genesis().id,
                },
            ),
        ]
    }

    pub fn current_round(&self) -> Round {
        self.current_round
    }

    pub fn exported_round(&self) -> u64 {
        self.exported_round
    }

    pub fn local_dag(&self) -> &BTreeMap<Round, BTreeMap<NodeId, Arc<Vertex>>> {
        &self.local_dag
    }

    pub fn commits(&self) -> &[Commit] {
        &self.committed
    }

    pub fn equivocations_seen(&self) -> u64 {
        self.equivocations_seen
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// Own vertices in round order, then own equivocating duplicates.
    pub fn own_vertices(&self) -> Vec<Arc<Vertex>> {
        let mut out: Vec<_> = self
            .local_dag
            .values()
            .filter_map(|row| row.get(&self.p.id).cloned())
            .collect();
        out.extend(self.own_equivocations.values().cloned());
        out
    }

    pub fn set_stake(&mut self, n: NodeId, stake: u64) {
        self.p.stakes.insert(n, stake);
        self.total_stake = self.p.stakes.values().sum();
    }

    pub fn take_journal(&mut self) -> Journal {
        std::mem::take(&mut self.journal)
    }

    fn delta(&self, field: &str, op: DeltaOp) -> StateDelta {
        StateDelta {
            node: self.p.id,
            field: field.to_string(),
            op,
        }
    }

    fn log(&mut self, a: ConcreteAction, d: Vec<StateDelta>) {
        self.journal.push((a, d));
    }

    fn vertex_action(&self, kind: &str, v: &Vertex) -> ConcreteAction {
        ConcreteAction::new(kind)
            .with("node", self.p.id)
            .with("creator", v.creator)
            .with("round", v.round)
            .with("vertex", v.id)
    }

    fn slot(&self, r: Round, q: NodeId) -> Option<&Arc<Vertex>> {
        self.local_dag.get(&r).and_then(|row| row.get(&q))
    }

    fn stake_at(&self, r: Round) -> u64 {
        self.local_dag
            .get(&r)
            .map_or(0, |row| row.keys().map(|q| self.p.stakes.get(q).copied().unwrap_or(0)).sum())
    }

    fn store(&mut self, v: Arc<Vertex>) {
        if let Some(old) = self.local_dag.entry(v.round).or_default().insert(v.creator, v.clone()) {
            if old.id != v.id {
                self.by_id.remove(&old.id);
            }
        }
        self.by_id.insert(v.id, v);
    }

    fn set_round(&mut self, r: Round) {
        self.current_round = r;
        self.exported_round = if self.p.flags.zero_indexed_rounds { r - 1 } else { r };
        let d = self.delta(CURRENT_ROUND, DeltaOp::Set { value: self.exported_round });
        let a = ConcreteAction::new("impl.advance_round")
            .with("node", self.p.id)
            .with("round", r);
        self.log(a, vec![d]);
    }

    fn budget_allows(&mut self, now: u64) -> bool {
        let w = now / WINDOW_US;
        if self.window.0 != w {
            self.window = (w, 0);
        }
        self.window.1 < self.p.production_rate
    }

    /// Periodic timer: commit what is committable, then try to advance.
    pub fn on_timer(&mut self, now: u64) -> Option<Arc<Vertex>> {
        self.log(ConcreteAction::new("impl.timer_fire").with("node", self.p.id), vec![]);
        self.try_commit_all();
        self.try_advance(now)
    }

    /// Round advancement and vertex creation, as one step. Returns the new
    /// vertex for broadcast.
    pub fn try_advance(&mut self, now: u64) -> Option<Arc<Vertex>> {
        if self.pending_increment {
            self.pending_increment = false;
            self.set_round(self.current_round + 1);
        }
        let r = self.current_round;
        if r >= self.p.max_rounds || !is_quorum(self.stake_at(r), self.total_stake) {
            return None;
        }
        if !self.budget_allows(now) {
            return None;
        }
        self.window.1 += 1;
        let parents: Vec<VertexId> = self.local_dag[&r].values().map(|v| v.id).collect();
        let v = Arc::new(Vertex::new(self.p.id, r + 1, parents, 0));
        if self.p.flags.lazy_round_increment {
            self.pending_increment = true;
        } else {
            self.set_round(r + 1);
        }
        self.store(v.clone());
        let d = self.delta(
            LOCAL_DAG,
            DeltaOp::MapInsert {
                round: v.round,
                creator: v.creator,
                vertex: v.id,
            },
        );
        let a = ConcreteAction::new("impl.create_vertex")
            .with("node", self.p.id)
            .with("round", v.round)
            .with("vertex", v.id);
        self.log(a, vec![d]);
        let b = ConcreteAction::new("impl.broadcast")
            .with("node", self.p.id)
            .with("vertex", v.id);
        self.log(b, vec![]);
        self.flush_buffer();
        Some(v)
    }

    fn acceptable(&self, v: &Vertex) -> bool {
        if !self.p.flags.no_future_round_guard && v.round > self.current_round + 1 {
            return false;
        }
        v.parents.iter().all(|par| {
            self.by_id
                .get(par)
                .is_some_and(|pv| pv.round + 1 == v.round && self.slot(pv.round, pv.creator).is_some_and(|s| s.id == *par))
        })
    }

    fn accept(&mut self, v: Arc<Vertex>) {
        let d = self.delta(
            LOCAL_DAG,
            DeltaOp::MapInsert {
                round: v.round,
                creator: v.creator,
                vertex: v.id,
            },
        );
        let a = self.vertex_action("impl.accept_vertex", &v);
        self.store(v);
        self.log(a, vec![d]);
    }

    /// Accepts, buffers, drops or flags `v`; true iff the local DAG changed.
    fn examine(&mut self, v: Arc<Vertex>) -> bool {
        if v.creator == self.p.id {
            let a = self.vertex_action("impl.drop_duplicate", &v);
            self.log(a, vec![]);
            return false;
        }
        match self.slot(v.round, v.creator).map(|e| e.id) {
            Some(id) if id == v.id => {
                if self.p.flags.accept_duplicates {
                    self.accept(v);
                    return true;
                }
                let a = self.vertex_action("impl.drop_duplicate", &v);
                self.log(a, vec![]);
                false
            }
            Some(_) => {
                self.equivocations_seen += 1;
                let a = self.vertex_action("impl.flag_equivocation", &v);
                self.log(a, vec![]);
                if self.p.flags.equivocation_unaware {
                    self.accept(v);
                    return true;
                }
                false
            }
            None if self.acceptable(&v) => {
                self.accept(v);
                true
            }
            None => {
                let dup = !self.p.flags.accept_duplicates && self.buffer.iter().any(|b| b.id == v.id);
                let kind = if dup { "impl.drop_duplicate" } else { "impl.buffer_vertex" };
                let a = self.vertex_action(kind, &v);
                self.log(a, vec![]);
                if !dup {
                    self.buffer.push(v);
                }
                false
            }
        }
    }

    pub fn on_receive(&mut self, from: NodeId, v: Arc<Vertex>) {
        let a = self.vertex_action("impl.deliver", &v).with("from", from);
        self.log(a, vec![]);
        if self.examine(v) {
            self.flush_buffer();
        }
    }

    /// Re-examines buffered vertices until no more can be accepted.
    fn flush_buffer(&mut self) {
        loop {
            let pending = std::mem::take(&mut self.buffer);
            let mut progressed = false;
            let mut keep = Vec::new();
            for v in pending {
                let resolvable = self.slot(v.round, v.creator).is_some() || self.acceptable(&v);
                if resolvable {
                    progressed |= self.examine(v);
                } else {
                    keep.push(v);
                }
            }
            keep.append(&mut self.buffer);
            self.buffer = keep;
            if !progressed {
                break;
            }
        }
    }

    fn tie_rank(&self, wave: Wave, creator: NodeId) -> u64 {
        let mut h = Hasher::new();
        h.update(self.p.id.to_be_bytes());
        h.update(wave.to_be_bytes());
        h.update(creator.to_be_bytes());
        let d: [u8; 32] = h.finalize().into();
        u64::from_be_bytes(d[..8].try_into().unwrap())
    }

    fn leader_slot(&self, w: Wave) -> Option<Arc<Vertex>> {
        let lr = (2 * w).checked_sub(1)?;
        let leader_node = self.p.leader_set[((w - 1) % self.p.leader_set.len() as u64) as usize];
        self.slot(lr, leader_node).cloned()
    }

    fn has_path(&self, from: &Vertex, to: &Vertex) -> bool {
        let mut seen = HashSet::new();
        let mut stack: Vec<&Vertex> = vec![from];
        while let Some(v) = stack.pop() {
            if v.id == to.id {
                return true;
            }
            if v.round > to.round && seen.insert(v.id) {
                stack.extend(v.parents.iter().filter_map(|p| self.by_id.get(p).map(|a| a.as_ref())));
            }
        }
        false
    }

    /// Commits one wave: the earliest leader on the chain that ends at the
    /// first directly supported leader. Returns false if nothing commits.
    pub fn try_commit_next(&mut self) -> bool {
        let Some(first) = self.next_wave else { return false };
        let top = self.local_dag.keys().next_back().copied().unwrap_or(0);
        let mut anchor = None;
        let mut w = first;
        while w.checked_mul(2).is_some_and(|r| r <= top) {
            if let Some(l) = self.leader_slot(w) {
                let support: u64 = self.local_dag.get(&(l.round + 1)).map_or(0, |row| {
                    row.iter()
                        .filter(|(_, v)| v.parents.contains(&l.id))
                        .map(|(q, _)| self.p.stakes.get(q).copied().unwrap_or(0))
                        .sum()
                });
                if is_quorum(support, self.total_stake) {
                    anchor = Some((w, l));
                    break;
                }
            }
            w += 1;
        }
        let Some((mut w, mut chosen)) = anchor else { return false };
        for u in (first..w).rev() {
            if let Some(l) = self.leader_slot(u) {
                if self.has_path(&chosen, &l) {
                    (w, chosen) = (u, l);
                }
            }
        }
        let lr = chosen.round;
        let leader = chosen.id;
        let block = if self.p.flags.shuffled_linearization {
            let order = |c: NodeId| self.tie_rank(w, c);
            linearize(&self.by_id, leader, &self.covered, &order)
        } else {
            linearize(&self.by_id, leader, &self.covered, &())
        };
        self.covered.extend(block.iter().copied());
        let wave = if self.p.flags.wrapping_wave_index {
            lr.wrapping_sub(2) / 2 + 1
        } else {
            w
        };
        self.next_wave = wave.checked_add(1);
        let digest = block_digest(wave, &block);
        let d = self.delta(COMMIT_LOG, DeltaOp::Append { wave, vertex: leader });
        let a = ConcreteAction::new("impl.commit_leader")
            .with("node", self.p.id)
            .with("wave", wave)
            .with("vertex", leader);
        self.log(a, vec![d]);
        let b = ConcreteAction::new("impl.emit_block")
            .with("node", self.p.id)
            .with("wave", wave)
            .with("block", digest)
            .with("size", block.len() as u64);
        self.log(b, vec![]);
        self.committed.push(Commit {
            wave,
            leader,
            block,
            digest,
        });
        true
    }

    pub fn try_commit_all(&mut self) -> usize {
        let mut n = 0;
        while self.try_commit_next() {
            n += 1;
        }
        n
    }

    /// Byzantine behavior: a second vertex for round `r` with the same
    /// parents and a different salt.
    pub fn equivocate(&mut self, r: Round) -> Option<Arc<Vertex>> {
        if self.own_equivocations.contains_key(&r) {
            return None;
        }
        let v1 = self.slot(r, self.p.id)?.clone();
        let v2 = Arc::new(Vertex::new(self.p.id, r, v1.parents.clone(), 1));
        self.own_equivocations.insert(r, v2.clone());
        let mut deltas = vec![];
        if self.p.flags.equivocation_unaware {
            self.store(v2.clone());
            deltas.push(self.delta(
                LOCAL_DAG,
                DeltaOp::MapInsert {
                    round: r,
                    creator: self.p.id,
                    vertex: v2.id,
                },
            ));
        }
        let a = ConcreteAction::new("impl.equivocate")
            .with("node", self.p.id)
            .with("round", r)
            .with("vertex", v2.id);
        self.log(a, deltas);
        Some(v2)
    }
}
