//! The protocol implementation under test. Nodes are plain state machines
//! driven by the simulator; they never read a clock or a random source on
//! their own.

mod linearize;
mod node;

use serde::{Deserialize, Serialize};

pub use linearize::{linearize, LinearOrder};
pub use node::{Commit, Node, NodeParams};

use crate::trace::{vertex_id, NodeId, Round, VertexId};

/// Concrete field names the node reports state changes under.
pub mod fields {
    pub const LOCAL_DAG: &str = "local_dag";
    pub const CURRENT_ROUND: &str = "current_round";
    pub const COMMIT_LOG: &str = "commit_log";
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: VertexId,
    pub creator: NodeId,
    pub round: Round,
    /// Sorted, all at `round - 1`.
    pub parents: Vec<VertexId>,
    pub payload_count: u64,
}

impl Vertex {
    pub fn new(creator: NodeId, round: Round, mut parents: Vec<VertexId>, salt: u8) -> Self {
        parents.sort();
        parents.dedup();
        Vertex {
            id: vertex_id(creator, round, &parents, salt),
            creator,
            round,
            parents,
            payload_count: 1,
        }
    }

    pub fn genesis(creator: NodeId) -> Self {
        Vertex::new(creator, 1, Vec::new(), 0)
    }
}

/// Behavior switches that re-introduce historic implementation bugs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImplFlags {
    /// Round counter exported 0-indexed after the first advance.
    pub zero_indexed_rounds: bool,
    /// A vertex delivered twice is accepted twice.
    pub accept_duplicates: bool,
    /// Reconfiguration requests are ignored.
    pub no_reconfiguration: bool,
    /// Linearization breaks same-round ties by a per-node shuffled order.
    pub shuffled_linearization: bool,
    /// Wave number derived from the leader round with an unsigned wrap.
    pub wrapping_wave_index: bool,
    /// Vertices more than one round ahead are accepted without waiting for
    /// the node's own predecessor vertex.
    pub no_future_round_guard: bool,
    /// The round counter is incremented one timer after the vertex for the
    /// new round is created.
    pub lazy_round_increment: bool,
    /// Equivocation is assumed impossible: the newest vertex for a slot
    /// overwrites the stored one, including the equivocator's own.
    pub equivocation_unaware: bool,
}
