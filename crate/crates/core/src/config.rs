//! The unified TOML configuration document.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::mapping::MappingTable;
use crate::model::{ModelConfig, ModelFlags};
use crate::sim::SimConfig;
use crate::trace::Round;
use crate::violations::ViolationId;

/// Simulator parameters the grid may vary.
pub const FUZZABLE: [&str; 8] = [
    "num_nodes",
    "number_faulty",
    "failure_chance",
    "vertex_production_rate",
    "message_send_delay_ms",
    "message_receive_delay_ms",
    "iteration_duration_ms",
    "start_stagger_iterations",
];

fn is_integral(param: &str) -> bool {
    matches!(param, "num_nodes" | "number_faulty" | "vertex_production_rate")
}

/// Writes a fuzzed value into `cfg`. Integer parameters take the value as
/// is (the grid draws integers for them).
pub fn set_param(cfg: &mut SimConfig, param: &str, value: f64) -> Result<(), ConfigError> {
    match param {
        "num_nodes" => cfg.num_nodes = value as u32,
        "number_faulty" => cfg.number_faulty = value as u32,
        "failure_chance" => cfg.failure_chance = value,
        "vertex_production_rate" => cfg.vertex_production_rate = value as u32,
        "message_send_delay_ms" => cfg.message_send_delay_ms = value,
        "message_receive_delay_ms" => cfg.message_receive_delay_ms = value,
        "iteration_duration_ms" => cfg.iteration_duration_ms = value,
        "start_stagger_iterations" => cfg.start_stagger_iterations = value,
        other => return Err(ConfigError::Invalid(format!("fuzz: {other:?} is not fuzzable"))),
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuzzConfig {
    /// Fuzzed parameters, in grid (lexicographic) order.
    pub parameters: Vec<String>,
    /// Closed range per parameter.
    pub ranges: BTreeMap<String, [f64; 2]>,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            parameters: vec![
                "num_nodes".into(),
                "iteration_duration_ms".into(),
                "failure_chance".into(),
            ],
            ranges: [
                ("num_nodes", [4.0, 20.0]),
                ("iteration_duration_ms", [10.0, 30.0]),
                ("failure_chance", [0.0, 1.0]),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        }
    }
}

impl FuzzConfig {
    pub fn integral(param: &str) -> bool {
        is_integral(param)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(format!("fuzz: {m}")));
        for (i, p) in self.parameters.iter().enumerate() {
            if !FUZZABLE.contains(&p.as_str()) {
                return bad(format!("{p:?} is not fuzzable (expected one of {FUZZABLE:?})"));
            }
            if self.parameters[..i].contains(p) {
                return bad(format!("{p:?} listed twice"));
            }
            let Some([lo, hi]) = self.ranges.get(p) else {
                return bad(format!("no range for {p:?}"));
            };
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!("range for {p:?} must be finite with lo <= hi"));
            }
        }
        for k in self.ranges.keys() {
            if !FUZZABLE.contains(&k.as_str()) {
                return bad(format!("range given for unknown parameter {k:?}"));
            }
        }
        Ok(())
    }
}

/// Model parameters for random walks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub num_nodes: u32,
    /// The first `number_faulty` nodes are Byzantine.
    pub number_faulty: u32,
    pub stakes: Option<Vec<u64>>,
    pub round_bound: Round,
    pub reconfigure_round: Option<Round>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            num_nodes: 4,
            number_faulty: 1,
            stakes: None,
            round_bound: 30,
            reconfigure_round: Some(10),
        }
    }
}

impl ModelSection {
    pub fn to_model(&self, flags: ModelFlags) -> Result<ModelConfig, ConfigError> {
        let mut m = ModelConfig::uniform(self.num_nodes, self.number_faulty, self.round_bound);
        if let Some(s) = &self.stakes {
            if s.len() != self.num_nodes as usize {
                return Err(ConfigError::Invalid("model: stakes must list one stake per node".into()));
            }
            m.stakes = (0..self.num_nodes).zip(s.iter().copied()).collect();
        }
        m.reconfigure_round = self.reconfigure_round;
        m.flags = flags;
        m.validate()?;
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkflowConfig {
    /// Values drawn per fuzzed parameter (k); a grid has k^p cells.
    pub grid_values: usize,
    /// Random walks per Workflow II batch (n).
    pub walks: usize,
    /// Maximum walk depth (d).
    pub depth: usize,
    /// Alternation iterations of the conformance loop.
    pub budget: usize,
    /// Master seed for grid draws, simulator seeds and walks.
    pub seed: u64,
    /// Regenerations allowed per walk before declaring exhaustion.
    pub retry_bound: usize,
    /// Trace-hash store; in memory when absent.
    pub store: Option<PathBuf>,
    /// Run grid cells and replays on the thread pool.
    pub parallel: bool,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        WorkflowConfig {
            grid_values: 3,
            walks: 10,
            depth: 1000,
            budget: 10,
            seed: 0,
            retry_bound: 100,
            store: None,
            parallel: true,
        }
    }
}

pub const METRICS: [&str; 6] = ["tps", "ttf", "vertex_count", "round_reached", "equivocations_seen", "crashes"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub enabled: Vec<String>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            enabled: METRICS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub seeded_violation: Option<ViolationId>,
    pub sim: SimConfig,
    pub fuzz: FuzzConfig,
    pub model: ModelSection,
    pub workflow: WorkflowConfig,
    pub metrics: MetricsConfig,
    pub mapping: MappingTable,
}

impl HarnessConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: HarnessConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        HarnessConfig::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sim.validate()?;
        self.fuzz.validate()?;
        self.model.to_model(ModelFlags::default())?;
        if self.workflow.grid_values == 0 {
            return Err(ConfigError::Invalid("workflow: grid_values must be positive".into()));
        }
        for m in &self.metrics.enabled {
            if !METRICS.contains(&m.as_str()) {
                return Err(ConfigError::Invalid(format!("metrics: unknown metric {m:?}")));
            }
        }
        self.mapping
            .compile()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig, ConfigError> {
        self.model.to_model(self.flags().0)
    }

    pub fn flags(&self) -> (ModelFlags, crate::sim::SimFlags) {
        crate::violations::flags_for(self.seeded_violation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = HarnessConfig::default();
        let text = c.to_toml();
        let back = HarnessConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn shipped_default_file_matches() {
        let text = include_str!("../../../configs/default.toml");
        assert_eq!(HarnessConfig::from_toml(text).unwrap(), HarnessConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = HarnessConfig::from_toml("[sim]\nnum_nodez = 4\n").unwrap_err();
        assert!(err.to_string().contains("num_nodez"), "{err}");
        assert!(HarnessConfig::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn partial_document_fills_defaults() {
        let c = HarnessConfig::from_toml("seeded_violation = \"V3\"\n[workflow]\nbudget = 2\n").unwrap();
        assert_eq!(c.workflow.budget, 2);
        assert_eq!(c.workflow.walks, 10);
        assert_eq!(c.seeded_violation.unwrap().number(), 3);
        assert!(c.flags().1.duplicate_deliveries);
    }

    #[test]
    fn bad_violation_id_is_a_config_error() {
        assert!(HarnessConfig::from_toml("seeded_violation = \"V11\"\n").is_err());
    }
}
