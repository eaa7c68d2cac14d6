//! Deterministic discrete-event simulator hosting the consensus nodes.

mod engine;
mod queue;
mod summary;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use engine::{Command, NetEvent, NetRecord, SimRun, Simulation};
pub use queue::{Event, EventQueue};
pub use summary::{CommitRecord, NodeSummary, RunSummary, VertexRecord};

use crate::consensus::ImplFlags;
use crate::error::ConfigError;
use crate::trace::{Digest, NodeId, Round};

/// Milliseconds to integer microseconds, rounding half up.
pub fn ms_to_us(ms: f64) -> u64 {
    (ms * 1000.0 + 0.5).floor() as u64
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivocationPlan {
    pub node: NodeId,
    pub round: Round,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub num_nodes: u32,
    /// The first `number_faulty` node ids may crash.
    pub number_faulty: u32,
    /// Per faulty node and timer iteration.
    pub failure_chance: f64,
    /// Vertices per node per second of virtual time, 0..=100.
    pub vertex_production_rate: u32,
    pub message_send_delay_ms: f64,
    pub message_receive_delay_ms: f64,
    pub iteration_duration_ms: f64,
    /// Each node's first timer fires at a uniform offset in
    /// `[0, start_stagger_iterations * iteration)` past the first iteration.
    pub start_stagger_iterations: f64,
    pub seed: u64,
    pub max_rounds: Round,
    pub max_virtual_time_ms: f64,
    /// Per-node stakes; all 1 when absent.
    pub stakes: Option<Vec<u64>>,
    /// Admit one extra node once every live node reaches this round.
    pub reconfigure_round: Option<Round>,
    pub equivocations: Vec<EquivocationPlan>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_nodes: 4,
            number_faulty: 1,
            failure_chance: 0.0,
            vertex_production_rate: 100,
            message_send_delay_ms: 1.5,
            message_receive_delay_ms: 2.5,
            iteration_duration_ms: 20.0,
            start_stagger_iterations: 4.0,
            seed: 0,
            max_rounds: 30,
            max_virtual_time_ms: 60_000.0,
            stakes: None,
            reconfigure_round: None,
            equivocations: Vec::new(),
        }
    }
}

impl SimConfig {
    pub fn stake_table(&self) -> BTreeMap<NodeId, u64> {
        (0..self.num_nodes)
            .map(|p| (p, self.stakes.as_ref().map_or(1, |s| s[p as usize])))
            .collect()
    }

    pub fn faulty_nodes(&self) -> Vec<NodeId> {
        (0..self.number_faulty).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(format!("sim: {m}")));
        if self.num_nodes == 0 {
            return bad("num_nodes must be positive".into());
        }
        if let Some(s) = &self.stakes {
            if s.len() != self.num_nodes as usize || s.contains(&0) {
                return bad("stakes must list one positive stake per node".into());
            }
        }
        if self.number_faulty > self.num_nodes {
            return bad("number_faulty exceeds num_nodes".into());
        }
        let stakes = self.stake_table();
        let total: u64 = stakes.values().sum();
        let faulty: u64 = self.faulty_nodes().iter().map(|p| stakes[p]).sum();
        if 3 * faulty >= total {
            return bad(format!("faulty stake {faulty} is not below a third of {total}"));
        }
        if !(0.0..=1.0).contains(&self.failure_chance) {
            return bad("failure_chance must lie in [0, 1]".into());
        }
        if self.vertex_production_rate > 100 {
            return bad("vertex_production_rate must lie in [0, 100]".into());
        }
        for (name, v) in [
            ("message_send_delay_ms", self.message_send_delay_ms),
            ("message_receive_delay_ms", self.message_receive_delay_ms),
            ("start_stagger_iterations", self.start_stagger_iterations),
            ("max_virtual_time_ms", self.max_virtual_time_ms),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a non-negative number"));
            }
        }
        if !(self.iteration_duration_ms.is_finite() && ms_to_us(self.iteration_duration_ms) > 0) {
            return bad("iteration_duration_ms must be positive".into());
        }
        if self.max_rounds < 2 {
            return bad("max_rounds must be at least 2".into());
        }
        for e in &self.equivocations {
            if e.node >= self.number_faulty {
                return bad(format!("equivocating node {} is not faulty", e.node));
            }
        }
        Ok(())
    }

    /// Short stable identifier for trace headers.
    pub fn id(&self) -> String {
        Digest::of(&serde_json::to_vec(self).expect("config serializes")).short()
    }
}

/// Switches for the simulated environment and the hosted implementation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimFlags {
    pub imp: ImplFlags,
    /// The network occasionally delivers a message twice.
    pub duplicate_deliveries: bool,
}

/// Probability that a send is delivered twice when duplication is enabled.
pub const DUPLICATE_PROBABILITY: f64 = 0.01;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ms_conversion_rounds_half_up() {
        assert_eq!(ms_to_us(25.31), 25_310);
        assert_eq!(ms_to_us(1.5), 1_500);
        assert_eq!(ms_to_us(0.0005), 1);
        assert_eq!(ms_to_us(0.0004), 0);
    }

    #[test]
    fn faulty_third_rejected() {
        let cfg = SimConfig {
            num_nodes: 3,
            number_faulty: 1,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(SimConfig::default().validate().is_ok());
    }
}
