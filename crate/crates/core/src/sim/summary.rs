use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::trace::{Digest, NodeId, Round, VertexId, Wave};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VertexRecord {
    pub id: VertexId,
    pub creator: NodeId,
    pub round: Round,
    pub created_us: u64,
    pub payload_count: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub wave: Wave,
    pub leader: VertexId,
    pub block: Vec<VertexId>,
    pub digest: Digest,
    pub time_us: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub id: NodeId,
    pub faulty: bool,
    pub crashed: bool,
    pub round: Round,
    pub equivocations_seen: u64,
    pub commits: Vec<CommitRecord>,
}

/// Everything metrics need from a finished run, persisted as `run.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub config_id: String,
    pub virtual_time_us: u64,
    pub trace_steps: usize,
    pub nodes: Vec<NodeSummary>,
    pub vertices: Vec<VertexRecord>,
}

impl RunSummary {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes") + "\n"
    }
}
