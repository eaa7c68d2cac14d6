//! Executable abstract model of the DAG protocol as a labeled transition
//! system: guards, successor function, random walks, trace acceptance and
//! safety invariants.

mod accept;
mod invariants;
mod walk;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use accept::{accept_trace, replay_prefix, AcceptVerdict, RejectReason};
pub use invariants::{check_invariants, InvariantReport};
pub use walk::{model_random_walk, Walker};

use crate::error::ConfigError;
use crate::trace::{
    block_digest, vertex_id, AbstractAction, AbstractState, Digest, LeaderEntry, NodeId, Round,
    VertexId, Wave,
};

/// Smallest stake strictly above two thirds of `total`.
pub fn quorum_threshold(total: u64) -> u64 {
    2 * total / 3 + 1
}

pub fn is_quorum(stake: u64, total: u64) -> bool {
    stake >= quorum_threshold(total)
}

/// Round-robin over the genesis node ordering; stake plays no role.
pub fn elect_leader(w: Wave, node_set: &[NodeId]) -> NodeId {
    assert!(w >= 1 && !node_set.is_empty());
    node_set[((w - 1) % node_set.len() as u64) as usize]
}

/// Behavior switches used to re-introduce historic specification bugs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFlags {
    /// Wave w uses rounds (2w, 2w+1), leaving genesis outside wave 1.
    pub genesis_outside_wave_one: bool,
    /// Entering a leader round records an undecided `(w, None)` entry for
    /// the previous wave.
    pub leader_sentinels: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub node_set: Vec<NodeId>,
    pub stakes: BTreeMap<NodeId, u64>,
    pub round_bound: Round,
    pub byzantine: BTreeSet<NodeId>,
    pub reconfigure_round: Option<Round>,
    #[serde(default)]
    pub flags: ModelFlags,
}

impl ModelConfig {
    /// `n` nodes with ids `0..n`, stake 1 each, the first `faulty` of them
    /// Byzantine.
    pub fn uniform(n: u32, faulty: u32, round_bound: Round) -> Self {
        ModelConfig {
            node_set: (0..n).collect(),
            stakes: (0..n).map(|p| (p, 1)).collect(),
            round_bound,
            byzantine: (0..faulty).collect(),
            reconfigure_round: Some(10),
            flags: ModelFlags::default(),
        }
    }

    pub fn total_stake(&self) -> u64 {
        self.stakes.values().sum()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(format!("model: {m}")));
        if self.node_set.is_empty() {
            return bad("node_set is empty".into());
        }
        let unique: BTreeSet<_> = self.node_set.iter().collect();
        if unique.len() != self.node_set.len() {
            return bad("node_set has duplicates".into());
        }
        if self.stakes.keys().collect::<BTreeSet<_>>() != unique {
            return bad("stakes must cover exactly node_set".into());
        }
        if self.stakes.values().any(|s| *s == 0) {
            return bad("stakes must be positive".into());
        }
        if self.round_bound < 2 {
            return bad("round_bound must be at least 2".into());
        }
        if !self.byzantine.iter().all(|b| unique.contains(b)) {
            return bad("byzantine set is not a subset of node_set".into());
        }
        let byz: u64 = self.byzantine.iter().map(|b| self.stakes[b]).sum();
        if 3 * byz >= self.total_stake() {
            return bad(format!(
                "byzantine stake {byz} is not below a third of total {}",
                self.total_stake()
            ));
        }
        if self.reconfigure_round == Some(0) {
            return bad("reconfigure_round must be at least 1".into());
        }
        Ok(())
    }

    pub fn leader_round(&self, w: Wave) -> Round {
        if self.flags.genesis_outside_wave_one {
            2 * w
        } else {
            2 * w - 1
        }
    }

    /// Short stable identifier for trace headers.
    pub fn id(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Digest::of(&json).short()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{action}: {reason}")]
pub struct GuardError {
    pub action: String,
    pub reason: String,
}

#[derive(Clone, Debug)]
struct VertexInfo {
    creator: NodeId,
    round: Round,
    parents: Vec<VertexId>,
}

/// Full model state: the shared abstract state plus bookkeeping the guards
/// need (vertex contents, pending creation, equivocations, commit coverage).
#[derive(Clone, Debug)]
pub struct ModelState {
    cfg: ModelConfig,
    abs: AbstractState,
    stakes: BTreeMap<NodeId, u64>,
    total: u64,
    vertices: HashMap<VertexId, VertexInfo>,
    equivocations: BTreeMap<(NodeId, Round), VertexId>,
    pending_create: Option<NodeId>,
    reconfigured: bool,
    committed: BTreeMap<NodeId, HashSet<VertexId>>,
    last_wave: BTreeMap<NodeId, Wave>,
}

impl ModelState {
    pub fn init(cfg: &ModelConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let mut s = ModelState {
            cfg: cfg.clone(),
            abs: AbstractState::new(cfg.byzantine.iter().copied()),
            stakes: cfg.stakes.clone(),
            total: cfg.total_stake(),
            vertices: HashMap::new(),
            equivocations: BTreeMap::new(),
            pending_create: None,
            reconfigured: false,
            committed: BTreeMap::new(),
            last_wave: BTreeMap::new(),
        };
        for &p in &cfg.node_set {
            s.add_genesis(p);
        }
        Ok(s)
    }

    fn add_genesis(&mut self, p: NodeId) {
        let g = vertex_id(p, 1, &[], 0);
        self.vertices.insert(
            g,
            VertexInfo {
                creator: p,
                round: 1,
                parents: vec![],
            },
        );
        self.abs.set_round(p, 1);
        self.abs.insert_vertex(p, 1, p, g);
        self.committed.insert(p, HashSet::new());
        self.last_wave.insert(p, 0);
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn abstract_state(&self) -> &AbstractState {
        &self.abs
    }

    pub fn digest(&mut self) -> Digest {
        self.abs.digest()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.abs.nodes().keys().copied()
    }

    pub fn round(&self, p: NodeId) -> Round {
        self.abs.node(p).map_or(0, |v| v.round)
    }

    pub fn pending_create(&self) -> Option<NodeId> {
        self.pending_create
    }

    pub fn total_stake(&self) -> u64 {
        self.total
    }

    /// True once every node sits at `round_bound` with nothing pending.
    pub fn at_round_bound(&self) -> bool {
        self.pending_create.is_none()
            && self
                .abs
                .nodes()
                .values()
                .all(|v| v.round >= self.cfg.round_bound)
    }

    fn stake_at(&self, p: NodeId, r: Round) -> u64 {
        self.abs
            .node(p)
            .and_then(|v| v.row(r))
            .map_or(0, |row| row.keys().map(|q| self.stakes.get(q).copied().unwrap_or(0)).sum())
    }

    fn has_parents(&self, p: NodeId, v: VertexId) -> bool {
        let view = &self.abs.nodes()[&p];
        let info = &self.vertices[&v];
        info.parents.iter().all(|par| {
            view.row(info.round - 1)
                .is_some_and(|row| row.values().any(|x| x == par))
        })
    }

    fn own_parents(&self, p: NodeId, r: Round) -> Vec<VertexId> {
        let mut parents: Vec<VertexId> = self.abs.nodes()[&p]
            .row(r - 1)
            .map(|row| row.values().copied().collect())
            .unwrap_or_default();
        parents.sort();
        parents
    }

    fn support(&self, p: NodeId, support_round: Round, leader: VertexId) -> u64 {
        let Some(row) = self.abs.nodes()[&p].row(support_round) else {
            return 0;
        };
        row.iter()
            .filter(|(_, v)| self.vertices[v].parents.contains(&leader))
            .map(|(q, _)| self.stakes[q])
            .sum()
    }

    /// Ordered vertex list of the block that committing `leader` at `p`
    /// would produce: its causal history minus what `p` already committed,
    /// sorted by (round, creator, id).
    pub fn block_for(&self, p: NodeId, leader: VertexId) -> Vec<VertexId> {
        let done = &self.committed[&p];
        let mut seen: HashSet<VertexId> = HashSet::new();
        let mut stack = vec![leader];
        let mut out: Vec<(Round, NodeId, VertexId)> = Vec::new();
        while let Some(v) = stack.pop() {
            if done.contains(&v) || !seen.insert(v) {
                continue;
            }
            let info = &self.vertices[&v];
            out.push((info.round, info.creator, v));
            stack.extend(info.parents.iter().copied());
        }
        out.sort();
        out.into_iter().map(|(_, _, v)| v).collect()
    }

    fn directly_supported(&self, p: NodeId, w: Wave) -> Option<VertexId> {
        let lr = self.cfg.leader_round(w);
        let v = self.abs.nodes()[&p].get(lr, elect_leader(w, &self.cfg.node_set))?;
        is_quorum(self.support(p, lr + 1, v), self.total).then_some(v)
    }

    fn reaches(&self, from: VertexId, to: VertexId) -> bool {
        let target = self.vertices[&to].round;
        let mut seen = HashSet::new();
        let mut stack = vec![from];
        while let Some(v) = stack.pop() {
            if v == to {
                return true;
            }
            let info = &self.vertices[&v];
            if info.round > target && seen.insert(v) {
                stack.extend(info.parents.iter().copied());
            }
        }
        false
    }

    /// The commit available to `p`: find the earliest wave after the last
    /// committed one whose leader has quorum support at the next round, then
    /// walk back through earlier leaders reachable from it. The earliest
    /// wave on that chain commits first.
    fn next_commit(&self, p: NodeId) -> Option<(Wave, VertexId, Digest)> {
        let last = self.last_wave[&p];
        let view = &self.abs.nodes()[&p];
        let top = view.dag.keys().next_back().copied().unwrap_or(0);
        let mut w = last + 1;
        let (anchor_wave, anchor) = loop {
            if self.cfg.leader_round(w) + 1 > top {
                return None;
            }
            if let Some(v) = self.directly_supported(p, w) {
                break (w, v);
            }
            w += 1;
        };
        let (mut wave, mut cur) = (anchor_wave, anchor);
        for u in (last + 1..anchor_wave).rev() {
            let leader = view.get(self.cfg.leader_round(u), elect_leader(u, &self.cfg.node_set));
            if let Some(l) = leader.filter(|l| self.reaches(cur, *l)) {
                (wave, cur) = (u, l);
            }
        }
        Some((wave, cur, block_digest(wave, &self.block_for(p, cur))))
    }

    /// Reliable broadcast: once an honest node holds one of two equivocating
    /// vertices, no honest node may deliver the other.
    fn honest_conflict(&self, p: NodeId, q: NodeId, r: Round, v: VertexId) -> Option<VertexId> {
        if self.cfg.byzantine.contains(&p) || !self.equivocations.contains_key(&(q, r)) {
            return None;
        }
        self.abs
            .nodes()
            .iter()
            .filter(|(h, _)| !self.cfg.byzantine.contains(h))
            .find_map(|(_, view)| view.get(r, q).filter(|held| *held != v))
    }

    fn honest_rounds(&self) -> impl Iterator<Item = Round> + '_ {
        self.abs
            .nodes()
            .iter()
            .filter(|(p, _)| !self.cfg.byzantine.contains(p))
            .map(|(_, v)| v.round)
    }

    fn next_node_id(&self) -> NodeId {
        self.abs.nodes().keys().next_back().map_or(0, |m| m + 1)
    }

    /// Checks the guard of `a` against the current state.
    pub fn check(&self, a: &AbstractAction) -> Result<(), GuardError> {
        let fail = |reason: String| {
            Err(GuardError {
                action: a.to_string(),
                reason,
            })
        };
        for p in action_nodes(a) {
            if !self.abs.contains_node(p) && !matches!(a, AbstractAction::Reconfigure { .. }) {
                return fail(format!("unknown node {p}"));
            }
        }
        if let Some(p) = self.pending_create {
            if !matches!(a, AbstractAction::CreateVertex { p: q, .. } if *q == p) {
                return fail(format!("node {p} must create its vertex first"));
            }
        }
        match *a {
            AbstractAction::NextRound { p } => {
                let r = self.round(p);
                if r >= self.cfg.round_bound {
                    return fail(format!("round {r} is at the bound"));
                }
                let held = self.stake_at(p, r);
                if !is_quorum(held, self.total) {
                    return fail(format!("holds stake {held} of {} at round {r}", self.total));
                }
            }
            AbstractAction::CreateVertex { p, r, v } => {
                if self.pending_create != Some(p) {
                    return fail("no preceding NextRound".into());
                }
                if r != self.round(p) {
                    return fail(format!("node is at round {}", self.round(p)));
                }
                let expect = vertex_id(p, r, &self.own_parents(p, r), 0);
                if v != expect {
                    return fail(format!("expected vertex {expect:?}"));
                }
            }
            AbstractAction::ReceiveVertex { p, q, r, v } => {
                if p == q {
                    return fail("self delivery".into());
                }
                let own = self.abs.nodes()[&q].get(r, q);
                let eq = self.equivocations.get(&(q, r)).copied();
                if own != Some(v) && eq != Some(v) {
                    return fail(format!("{v:?} is not a vertex of node {q} at round {r}"));
                }
                if let Some(have) = self.abs.nodes()[&p].get(r, q) {
                    return fail(format!("slot already holds {have:?}"));
                }
                if let Some(other) = self.honest_conflict(p, q, r, v) {
                    return fail(format!("honest nodes already delivered {other:?} for this slot"));
                }
                if r > self.round(p) + 1 {
                    return fail(format!("round {r} is ahead of node round {}", self.round(p)));
                }
                if !self.has_parents(p, v) {
                    return fail("parents missing from the local view".into());
                }
            }
            AbstractAction::CommitLeader { p, w, v, block } => {
                if w <= self.last_wave[&p] {
                    return fail(format!("wave {} is already committed", self.last_wave[&p]));
                }
                match self.next_commit(p) {
                    None => return fail("no leader has quorum support".into()),
                    Some((nw, _, _)) if nw != w => return fail(format!("next committable wave is {nw}")),
                    Some((_, lv, _)) if lv != v => {
                        return fail(format!("wave leader is {lv:?}"));
                    }
                    Some((_, _, b)) if b != block => {
                        return fail(format!("block digest differs (expected {})", b.short()));
                    }
                    Some(_) => {}
                }
            }
            AbstractAction::Equivocate { b, r, v } => {
                if !self.cfg.byzantine.contains(&b) {
                    return fail("node is not byzantine".into());
                }
                let Some(v1) = self.abs.nodes()[&b].get(r, b) else {
                    return fail(format!("no own vertex at round {r}"));
                };
                if self.equivocations.contains_key(&(b, r)) {
                    return fail("already equivocated".into());
                }
                let expect = vertex_id(b, r, &self.vertices[&v1].parents, 1);
                if v != expect {
                    return fail(format!("expected vertex {expect:?}"));
                }
            }
            AbstractAction::Reconfigure { n } => {
                let Some(r0) = self.cfg.reconfigure_round else {
                    return fail("reconfiguration disabled".into());
                };
                if self.reconfigured {
                    return fail("already reconfigured".into());
                }
                if self.honest_rounds().any(|r| r < r0) {
                    return fail(format!("some honest node is below round {r0}"));
                }
                if n != self.next_node_id() {
                    return fail(format!("new node must be {}", self.next_node_id()));
                }
            }
        }
        Ok(())
    }

    /// Applies `a` after checking its guard.
    pub fn apply(&mut self, a: &AbstractAction) -> Result<(), GuardError> {
        self.check(a)?;
        self.apply_unchecked(a);
        Ok(())
    }

    fn apply_unchecked(&mut self, a: &AbstractAction) {
        match *a {
            AbstractAction::NextRound { p } => {
                let r = self.round(p) + 1;
                self.abs.set_round(p, r);
                self.pending_create = Some(p);
                if self.cfg.flags.leader_sentinels && r % 2 == 1 && r >= 3 {
                    let w = (r - 1) / 2;
                    let known = self.abs.nodes()[&p].leaders.iter().any(|e| e.wave == w);
                    if !known {
                        self.abs.push_leader(p, LeaderEntry { wave: w, vertex: None });
                    }
                }
            }
            AbstractAction::CreateVertex { p, r, v } => {
                let parents = self.own_parents(p, r);
                self.vertices.insert(v, VertexInfo { creator: p, round: r, parents });
                self.abs.insert_vertex(p, r, p, v);
                self.pending_create = None;
            }
            AbstractAction::ReceiveVertex { p, q, r, v } => {
                self.abs.insert_vertex(p, r, q, v);
            }
            AbstractAction::CommitLeader { p, w, v, .. } => {
                let block = self.block_for(p, v);
                self.committed.get_mut(&p).unwrap().extend(block);
                self.last_wave.insert(p, w);
                let entry = LeaderEntry { wave: w, vertex: Some(v) };
                if self.cfg.flags.leader_sentinels {
                    self.abs.put_leader(p, entry);
                } else {
                    self.abs.push_leader(p, entry);
                }
            }
            AbstractAction::Equivocate { b, r, v } => {
                let v1 = self.abs.nodes()[&b].get(r, b).unwrap();
                let parents = self.vertices[&v1].parents.clone();
                self.vertices.insert(v, VertexInfo { creator: b, round: r, parents });
                self.equivocations.insert((b, r), v);
            }
            AbstractAction::Reconfigure { n } => {
                self.reconfigured = true;
                self.stakes.insert(n, 1);
                self.total += 1;
                self.add_genesis(n);
            }
        }
    }

    /// Every enabled action, in canonical order.
    pub fn enabled_actions(&self) -> Vec<AbstractAction> {
        let mut out = Vec::new();
        if let Some(p) = self.pending_create {
            let r = self.round(p);
            let v = vertex_id(p, r, &self.own_parents(p, r), 0);
            out.push(AbstractAction::CreateVertex { p, r, v });
            return out;
        }
        let nodes = self.abs.nodes();
        for (&p, view) in nodes {
            if view.round < self.cfg.round_bound && is_quorum(self.stake_at(p, view.round), self.total) {
                out.push(AbstractAction::NextRound { p });
            }
            for (&q, qview) in nodes {
                if q == p {
                    continue;
                }
                for r in 1..=view.round + 1 {
                    if view.get(r, q).is_some() {
                        continue;
                    }
                    let cands = [qview.get(r, q), self.equivocations.get(&(q, r)).copied()];
                    for v in cands.into_iter().flatten() {
                        if self.has_parents(p, v) && self.honest_conflict(p, q, r, v).is_none() {
                            out.push(AbstractAction::ReceiveVertex { p, q, r, v });
                        }
                    }
                }
            }
            if let Some((w, v, block)) = self.next_commit(p) {
                out.push(AbstractAction::CommitLeader { p, w, v, block });
            }
        }
        for &b in &self.cfg.byzantine {
            let Some(view) = nodes.get(&b) else { continue };
            for (&r, row) in &view.dag {
                if let Some(&v1) = row.get(&b) {
                    if !self.equivocations.contains_key(&(b, r)) {
                        let v = vertex_id(b, r, &self.vertices[&v1].parents, 1);
                        out.push(AbstractAction::Equivocate { b, r, v });
                    }
                }
            }
        }
        if let Some(r0) = self.cfg.reconfigure_round {
            if !self.reconfigured && self.honest_rounds().all(|r| r >= r0) {
                out.push(AbstractAction::Reconfigure { n: self.next_node_id() });
            }
        }
        out.sort();
        out
    }
}

fn action_nodes(a: &AbstractAction) -> Vec<NodeId> {
    match *a {
        AbstractAction::ReceiveVertex { p, q, .. } => vec![p, q],
        AbstractAction::Reconfigure { .. } => vec![],
        ref other => vec![other.actor()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::ActionKind;

    fn cfg4() -> ModelConfig {
        ModelConfig::uniform(4, 1, 8)
    }

    fn receive_all_round(s: &mut ModelState, r: Round) {
        let nodes: Vec<_> = s.nodes().collect();
        for &p in &nodes {
            for &q in &nodes {
                if p == q {
                    continue;
                }
                if let Some(v) = s.abstract_state().node(q).unwrap().get(r, q) {
                    s.apply(&AbstractAction::ReceiveVertex { p, q, r, v }).unwrap();
                }
            }
        }
    }

    fn advance_all(s: &mut ModelState) {
        let nodes: Vec<_> = s.nodes().collect();
        for p in nodes {
            s.apply(&AbstractAction::NextRound { p }).unwrap();
            let a = s.enabled_actions().pop().unwrap();
            s.apply(&a).unwrap();
        }
    }

    #[test]
    fn quorum_thresholds() {
        assert_eq!(quorum_threshold(4), 3);
        assert_eq!(quorum_threshold(3), 3);
        assert_eq!(quorum_threshold(10), 7);
    }

    #[test]
    fn init_shape() {
        let s = ModelState::init(&cfg4()).unwrap();
        for p in 0..4 {
            let v = s.abstract_state().node(p).unwrap();
            assert_eq!(v.round, 1);
            assert!(v.get(1, p).is_some());
            assert_eq!(v.row(1).unwrap().len(), 1);
            assert!(v.leaders.is_empty());
        }
        let kinds: Vec<_> = s.enabled_actions().iter().map(|a| a.kind()).collect();
        let count = |k| kinds.iter().filter(|x| **x == k).count();
        assert_eq!(count(ActionKind::ReceiveVertex), 12);
        assert_eq!(count(ActionKind::Equivocate), 1);
        assert_eq!(kinds.len(), 13);
    }

    #[test]
    fn byzantine_third_is_rejected() {
        let cfg = ModelConfig::uniform(3, 1, 8);
        assert!(ModelState::init(&cfg).is_err());
    }

    #[test]
    fn create_follows_next_round_atomically() {
        let mut s = ModelState::init(&cfg4()).unwrap();
        receive_all_round(&mut s, 1);
        s.apply(&AbstractAction::NextRound { p: 1 }).unwrap();
        let enabled = s.enabled_actions();
        assert_eq!(enabled.len(), 1);
        assert!(matches!(enabled[0], AbstractAction::CreateVertex { p: 1, r: 2, .. }));
        assert!(s.check(&AbstractAction::NextRound { p: 2 }).is_err());
    }

    #[test]
    fn duplicate_receive_is_a_guard_failure() {
        let mut s = ModelState::init(&cfg4()).unwrap();
        let v = s.abstract_state().node(1).unwrap().get(1, 1).unwrap();
        let a = AbstractAction::ReceiveVertex { p: 0, q: 1, r: 1, v };
        s.apply(&a).unwrap();
        assert!(s.apply(&a).is_err());
    }

    #[test]
    fn wave_one_commits_after_round_two() {
        let mut s = ModelState::init(&cfg4()).unwrap();
        receive_all_round(&mut s, 1);
        advance_all(&mut s);
        receive_all_round(&mut s, 2);
        let commits: Vec<_> = s
            .enabled_actions()
            .into_iter()
            .filter(|a| a.kind() == ActionKind::CommitLeader)
            .collect();
        assert_eq!(commits.len(), 4);
        let leader = vertex_id(0, 1, &[], 0);
        for c in &commits {
            match c {
                AbstractAction::CommitLeader { w, v, block, .. } => {
                    assert_eq!(*w, 1);
                    assert_eq!(*v, leader);
                    assert_eq!(*block, block_digest(1, &[leader]));
                }
                _ => unreachable!(),
            }
        }
        s.apply(&commits[0]).unwrap();
        assert!(s.check(&commits[0]).is_err());
    }

    #[test]
    fn leader_ignores_stakes() {
        let nodes = [0, 1, 2];
        for w in 1..=20 {
            assert_eq!(elect_leader(w, &nodes), nodes[((w - 1) % 3) as usize]);
        }
    }
}
