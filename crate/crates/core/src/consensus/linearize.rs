use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::sync::Arc;

use super::Vertex;
use crate::trace::{NodeId, Round, VertexId};

/// Round, tie-break, id.
type SortKey = (Round, u64, VertexId);

/// Tie-break key for vertices that become ready at the same time.
pub trait LinearOrder {
    fn key(&self, v: &Vertex) -> SortKey;
}

/// (round, creator, id) ascending.
impl LinearOrder for () {
    fn key(&self, v: &Vertex) -> SortKey {
        (v.round, v.creator as u64, v.id)
    }
}

impl<F: Fn(NodeId) -> u64> LinearOrder for F {
    fn key(&self, v: &Vertex) -> SortKey {
        (v.round, self(v.creator), v.id)
    }
}

/// Topological order (parents first) of `leader`'s causal history, skipping
/// anything in `covered`. Kahn's algorithm with a min-heap on `order`.
pub fn linearize(
    vertices: &HashMap<VertexId, Arc<Vertex>>,
    leader: VertexId,
    covered: &HashSet<VertexId>,
    order: &impl LinearOrder,
) -> Vec<VertexId> {
    let mut history: HashMap<VertexId, &Vertex> = HashMap::new();
    let mut stack = vec![leader];
    while let Some(id) = stack.pop() {
        if covered.contains(&id) || history.contains_key(&id) {
            continue;
        }
        let Some(v) = vertices.get(&id) else { continue };
        history.insert(id, v);
        stack.extend(v.parents.iter().copied());
    }
    let mut pending: HashMap<VertexId, usize> = HashMap::new();
    let mut children: HashMap<VertexId, Vec<VertexId>> = HashMap::new();
    for (id, v) in &history {
        let inside: Vec<_> = v.parents.iter().filter(|p| history.contains_key(p)).collect();
        pending.insert(*id, inside.len());
        for p in inside {
            children.entry(*p).or_default().push(*id);
        }
    }
    let mut ready: BinaryHeap<Reverse<(SortKey, VertexId)>> = pending
        .iter()
        .filter(|(_, n)| **n == 0)
        .map(|(id, _)| Reverse((order.key(history[id]), *id)))
        .collect();
    let mut out = Vec::with_capacity(history.len());
    while let Some(Reverse((_, id))) = ready.pop() {
        out.push(id);
        for c in children.get(&id).into_iter().flatten() {
            let n = pending.get_mut(c).unwrap();
            *n -= 1;
            if *n == 0 {
                ready.push(Reverse((order.key(history[c]), *c)));
            }
        }
    }
    out
}
