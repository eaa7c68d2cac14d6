use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::Digest as _;

use super::ids::{Digest, Hasher, NodeId, Round, VertexId, Wave};

/// One committed (or, for a model with sentinel leaders, undecided) wave.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaderEntry {
    pub wave: Wave,
    pub vertex: Option<VertexId>,
}

/// A single node's local view.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeView {
    pub round: Round,
    pub dag: BTreeMap<Round, BTreeMap<NodeId, VertexId>>,
    pub leaders: Vec<LeaderEntry>,
}

impl NodeView {
    pub fn get(&self, r: Round, creator: NodeId) -> Option<VertexId> {
        self.dag.get(&r).and_then(|row| row.get(&creator)).copied()
    }

    pub fn row(&self, r: Round) -> Option<&BTreeMap<NodeId, VertexId>> {
        self.dag.get(&r)
    }
}

#[derive(Clone, Debug, Default)]
struct DigestCache {
    rows: HashMap<(NodeId, Round), Digest>,
    nodes: HashMap<NodeId, Digest>,
    state: Option<Digest>,
}

/// Network-centric abstract state shared by model and implementation.
///
/// All mutation goes through the methods below so the digest cache stays
/// coherent. The digest is a two-level hash over rows and nodes, each level
/// iterated in ascending key order.
#[derive(Clone, Debug, Default)]
pub struct AbstractState {
    nodes: BTreeMap<NodeId, NodeView>,
    faulty: BTreeSet<NodeId>,
    cache: DigestCache,
}

impl PartialEq for AbstractState {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.faulty == other.faulty
    }
}

impl Eq for AbstractState {}

impl AbstractState {
    pub fn new(faulty: impl IntoIterator<Item = NodeId>) -> Self {
        AbstractState {
            faulty: faulty.into_iter().collect(),
            ..Default::default()
        }
    }

    pub fn nodes(&self) -> &BTreeMap<NodeId, NodeView> {
        &self.nodes
    }

    pub fn node(&self, p: NodeId) -> Option<&NodeView> {
        self.nodes.get(&p)
    }

    pub fn faulty(&self) -> &BTreeSet<NodeId> {
        &self.faulty
    }

    pub fn contains_node(&self, p: NodeId) -> bool {
        self.nodes.contains_key(&p)
    }

    fn touch(&mut self, p: NodeId) -> &mut NodeView {
        self.cache.nodes.remove(&p);
        self.cache.state = None;
        self.nodes.entry(p).or_default()
    }

    pub fn add_node(&mut self, p: NodeId) {
        self.touch(p);
    }

    pub fn set_round(&mut self, p: NodeId, round: Round) {
        self.touch(p).round = round;
    }

    pub fn insert_vertex(&mut self, p: NodeId, r: Round, creator: NodeId, v: VertexId) {
        self.cache.rows.remove(&(p, r));
        self.touch(p).dag.entry(r).or_default().insert(creator, v);
    }

    pub fn push_leader(&mut self, p: NodeId, entry: LeaderEntry) {
        self.touch(p).leaders.push(entry);
    }

    /// Replaces the entry for `entry.wave` if present, otherwise appends.
    pub fn put_leader(&mut self, p: NodeId, entry: LeaderEntry) {
        let view = self.touch(p);
        match view.leaders.iter_mut().find(|e| e.wave == entry.wave) {
            Some(slot) => *slot = entry,
            None => view.leaders.push(entry),
        }
    }

    fn row_digest(p: NodeId, r: Round, row: &BTreeMap<NodeId, VertexId>) -> Digest {
        let mut h = Hasher::new();
        h.update(b"row");
        h.update(p.to_be_bytes());
        h.update(r.to_be_bytes());
        h.update((row.len() as u64).to_be_bytes());
        for (q, v) in row {
            h.update(q.to_be_bytes());
            h.update(v.0);
        }
        Digest::from_hasher(h)
    }

    fn node_digest(p: NodeId, view: &NodeView, row: impl Fn(Round) -> Digest) -> Digest {
        let mut h = Hasher::new();
        h.update(b"node");
        h.update(p.to_be_bytes());
        h.update(view.round.to_be_bytes());
        h.update((view.dag.len() as u64).to_be_bytes());
        for r in view.dag.keys() {
            h.update(r.to_be_bytes());
            h.update(row(*r).0);
        }
        h.update((view.leaders.len() as u64).to_be_bytes());
        for e in &view.leaders {
            h.update(e.wave.to_be_bytes());
            match e.vertex {
                Some(v) => {
                    h.update([1]);
                    h.update(v.0);
                }
                None => h.update([0]),
            }
        }
        Digest::from_hasher(h)
    }

    fn combine(&self, node: impl Fn(NodeId) -> Digest) -> Digest {
        let mut h = Hasher::new();
        h.update(b"state");
        h.update((self.faulty.len() as u64).to_be_bytes());
        for f in &self.faulty {
            h.update(f.to_be_bytes());
        }
        h.update((self.nodes.len() as u64).to_be_bytes());
        for p in self.nodes.keys() {
            h.update(p.to_be_bytes());
            h.update(node(*p).0);
        }
        Digest::from_hasher(h)
    }

    /// Cached digest; only rows and nodes touched since the last call are
    /// rehashed.
    pub fn digest(&mut self) -> Digest {
        if let Some(d) = self.cache.state {
            return d;
        }
        let cache = &mut self.cache;
        for (p, view) in &self.nodes {
            if cache.nodes.contains_key(p) {
                continue;
            }
            for (r, row) in &view.dag {
                cache
                    .rows
                    .entry((*p, *r))
                    .or_insert_with(|| Self::row_digest(*p, *r, row));
            }
            let rows = &cache.rows;
            let d = Self::node_digest(*p, view, |r| rows[&(*p, r)]);
            cache.nodes.insert(*p, d);
        }
        let nodes = &self.cache.nodes;
        let d = self.combine(|p| nodes[&p]);
        self.cache.state = Some(d);
        d
    }

    /// Digest computed from scratch, ignoring the cache.
    pub fn compute_digest(&self) -> Digest {
        self.combine(|p| {
            let view = &self.nodes[&p];
            Self::node_digest(p, view, |r| Self::row_digest(p, r, &view.dag[&r]))
        })
    }

    /// Human-readable field differences, used in counterexample reports.
    pub fn diff(&self, other: &AbstractState) -> Vec<String> {
        let mut out = Vec::new();
        if self.faulty != other.faulty {
            out.push(format!("faulty: {:?} vs {:?}", self.faulty, other.faulty));
        }
        let ids: BTreeSet<NodeId> = self.nodes.keys().chain(other.nodes.keys()).copied().collect();
        let empty = NodeView::default();
        for p in ids {
            let (a, b) = match (self.nodes.get(&p), other.nodes.get(&p)) {
                (Some(a), Some(b)) => (a, b),
                (a, b) => {
                    out.push(format!(
                        "node {p}: present={} vs present={}",
                        a.is_some(),
                        b.is_some()
                    ));
                    (a.unwrap_or(&empty), b.unwrap_or(&empty))
                }
            };
            if a.round != b.round {
                out.push(format!("round[{p}]: {} vs {}", a.round, b.round));
            }
            let rounds: BTreeSet<Round> = a.dag.keys().chain(b.dag.keys()).copied().collect();
            for r in rounds {
                let creators: BTreeSet<NodeId> = a
                    .row(r)
                    .into_iter()
                    .chain(b.row(r))
                    .flat_map(|row| row.keys().copied())
                    .collect();
                for q in creators {
                    let (x, y) = (a.get(r, q), b.get(r, q));
                    if x != y {
                        out.push(format!("dag[{p}][{r}][{q}]: {x:?} vs {y:?}"));
                    }
                }
            }
            if a.leaders != b.leaders {
                out.push(format!("leaders[{p}]: {:?} vs {:?}", a.leaders, b.leaders));
            }
        }
        out
    }
}

/// Serialized form of [`AbstractState`] (the `post_state` field of a step).
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateWire {
    dag: BTreeMap<NodeId, BTreeMap<Round, BTreeMap<NodeId, VertexId>>>,
    round: BTreeMap<NodeId, Round>,
    leaders: BTreeMap<NodeId, Vec<LeaderEntry>>,
    faulty: Vec<NodeId>,
}

impl Serialize for AbstractState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        StateWire {
            dag: self.nodes.iter().map(|(p, v)| (*p, v.dag.clone())).collect(),
            round: self.nodes.iter().map(|(p, v)| (*p, v.round)).collect(),
            leaders: self.nodes.iter().map(|(p, v)| (*p, v.leaders.clone())).collect(),
            faulty: self.faulty.iter().copied().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AbstractState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let mut wire = StateWire::deserialize(d)?;
        let mut st = AbstractState::new(wire.faulty);
        for (p, round) in wire.round {
            st.nodes.insert(
                p,
                NodeView {
                    round,
                    dag: wire.dag.remove(&p).unwrap_or_default(),
                    leaders: wire.leaders.remove(&p).unwrap_or_default(),
                },
            );
        }
        if !wire.dag.is_empty() || !wire.leaders.is_empty() {
            return Err(serde::de::Error::custom("dag/leaders entry for a node without a round"));
        }
        Ok(st)
    }
}
