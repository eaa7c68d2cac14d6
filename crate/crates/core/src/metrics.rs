//! Performance metrics recomputed from a run summary, over virtual time only.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::sim::RunSummary;
use crate::trace::{NodeId, VertexId};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TtfSummary {
    pub count: usize,
    pub mean_ms: Option<f64>,
    pub p50_ms: Option<f64>,
    pub p99_ms: Option<f64>,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[u64], q: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

fn ms(us: u64) -> f64 {
    us as f64 / 1000.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Committed transactions per virtual second.
    pub tps: f64,
    /// Creation-to-first-inclusion latency over committed vertices.
    pub ttf: TtfSummary,
    /// Distinct vertices in some block of a non-faulty node.
    pub committed_vertices: u64,
    pub committed_per_node: BTreeMap<NodeId, u64>,
    pub vertex_count: u64,
    pub round_reached: u64,
    pub equivocations_seen: u64,
    pub crashes: u64,
    pub virtual_time_ms: f64,
}

impl MetricsRecord {
    pub fn compute(run: &RunSummary) -> Self {
        let created: HashMap<VertexId, (u64, u64)> = run
            .vertices
            .iter()
            .map(|v| (v.id, (v.created_us, v.payload_count)))
            .collect();
        let mut first_inclusion: HashMap<VertexId, u64> = HashMap::new();
        let mut per_node = BTreeMap::new();
        for n in &run.nodes {
            let count: usize = n.commits.iter().map(|c| c.block.len()).sum();
            per_node.insert(n.id, count as u64);
            if n.faulty {
                continue;
            }
            for c in &n.commits {
                for v in &c.block {
                    let t = first_inclusion.entry(*v).or_insert(c.time_us);
                    *t = (*t).min(c.time_us);
                }
            }
        }
        let mut ttf: Vec<u64> = Vec::with_capacity(first_inclusion.len());
        let mut txs = 0u64;
        for (v, t) in &first_inclusion {
            let (c, payload) = created.get(v).copied().unwrap_or((*t, 1));
            ttf.push(t.saturating_sub(c));
            txs += payload;
        }
        ttf.sort_unstable();
        let secs = run.virtual_time_us as f64 / 1e6;
        let tps = if secs > 0.0 { txs as f64 / secs } else { 0.0 };
        let mean = (!ttf.is_empty()).then(|| ttf.iter().sum::<u64>() as f64 / ttf.len() as f64 / 1000.0);
        MetricsRecord {
            tps,
            ttf: TtfSummary {
                count: ttf.len(),
                mean_ms: mean,
                p50_ms: percentile(&ttf, 0.5).map(ms),
                p99_ms: percentile(&ttf, 0.99).map(ms),
            },
            committed_vertices: first_inclusion.len() as u64,
            committed_per_node: per_node,
            vertex_count: run.vertices.len() as u64,
            round_reached: run.nodes.iter().map(|n| n.round).max().unwrap_or(0),
            equivocations_seen: run.nodes.iter().map(|n| n.equivocations_seen).sum(),
            crashes: run.nodes.iter().filter(|n| n.crashed).count() as u64,
            virtual_time_ms: ms(run.virtual_time_us),
        }
    }

    /// Flat JSON document restricted to `enabled` metrics (plus the
    /// committed counts and run length, which every report carries).
    pub fn to_json(&self, enabled: &[String]) -> String {
        let full = serde_json::to_value(self).expect("metrics serialize");
        let mut out = serde_json::Map::new();
        for (k, v) in full.as_object().expect("struct serializes to an object") {
            let always = matches!(k.as_str(), "committed_vertices" | "committed_per_node" | "virtual_time_ms");
            if always || enabled.iter().any(|e| e == k) {
                out.insert(k.clone(), v.clone());
            }
        }
        serde_json::to_string_pretty(&out).expect("metrics serialize") + "\n"
    }
}
