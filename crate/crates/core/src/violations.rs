//! The ten historic conformance violations, re-injectable as runtime flags.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::consensus::ImplFlags;
use crate::error::ConfigError;
use crate::model::ModelFlags;
use crate::sim::SimFlags;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    /// Implementation behavior the model does not allow.
    #[serde(rename = "type-i")]
    TypeI,
    /// Model behavior the implementation cannot execute.
    #[serde(rename = "type-ii")]
    TypeII,
    /// An implementation trace breaking a safety property.
    #[serde(rename = "prop")]
    Prop,
}

impl Classification {
    /// Type-I and Type-II discrepancies may be fixed on either side;
    /// a broken property is an implementation bug.
    pub fn fix_site(self) -> &'static str {
        match self {
            Classification::TypeI | Classification::TypeII => "model or implementation",
            Classification::Prop => "implementation",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classification::TypeI => "Type-I",
            Classification::TypeII => "Type-II",
            Classification::Prop => "Prop",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Site {
    Model,
    Implementation,
    Simulator,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ViolationId(u8);

impl ViolationId {
    pub const ALL: [ViolationId; 10] = [
        ViolationId(1),
        ViolationId(2),
        ViolationId(3),
        ViolationId(4),
        ViolationId(5),
        ViolationId(6),
        ViolationId(7),
        ViolationId(8),
        ViolationId(9),
        ViolationId(10),
    ];

    pub fn number(self) -> u8 {
        self.0
    }

    pub fn info(self) -> SeededViolation {
        use Classification::*;
        let (site, expected, min_config, description) = match self.0 {
            1 => (Site::Implementation, TypeI, "3/1", "rounds exported 0-indexed"),
            2 => (Site::Model, TypeI, "3/1", "model keeps genesis out of wave 1"),
            3 => (Site::Implementation, TypeI, "3/2", "duplicate delivery of a vertex is accepted twice"),
            4 => (Site::Model, TypeI, "3/1", "model records sentinel entries for undecided leaders"),
            5 => (Site::Implementation, TypeII, "10/1K", "no support for adding a node"),
            6 => (Site::Implementation, Prop, "3/2", "linearization order shuffled per node"),
            7 => (Site::Implementation, TypeI, "3/1", "unsigned underflow in the wave index"),
            8 => (Site::Implementation, TypeI, "3/1", "future-round vertices accepted before the own ancestor"),
            9 => (Site::Implementation, TypeI, "3/1", "round increment delayed by one timer"),
            10 => (Site::Implementation, TypeII, "10/1K", "equivocation assumed impossible"),
            _ => unreachable!("ids are validated on construction"),
        };
        SeededViolation {
            id: self,
            site,
            expected,
            min_config,
            description,
        }
    }

    pub fn model_flags(self) -> ModelFlags {
        let mut f = ModelFlags::default();
        match self.0 {
            2 => f.genesis_outside_wave_one = true,
            4 => f.leader_sentinels = true,
            _ => {}
        }
        f
    }

    pub fn sim_flags(self) -> SimFlags {
        let mut imp = ImplFlags::default();
        let mut duplicate_deliveries = false;
        match self.0 {
            1 => imp.zero_indexed_rounds = true,
            3 => {
                imp.accept_duplicates = true;
                duplicate_deliveries = true;
            }
            5 => imp.no_reconfiguration = true,
            6 => imp.shuffled_linearization = true,
            7 => imp.wrapping_wave_index = true,
            8 => imp.no_future_round_guard = true,
            9 => imp.lazy_round_increment = true,
            10 => imp.equivocation_unaware = true,
            _ => {}
        }
        SimFlags {
            imp,
            duplicate_deliveries,
        }
    }
}

/// Flags for an optional seeded violation.
pub fn flags_for(v: Option<ViolationId>) -> (ModelFlags, SimFlags) {
    v.map_or_else(Default::default, |v| (v.model_flags(), v.sim_flags()))
}

impl fmt::Display for ViolationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "V{}", self.0)
    }
}

impl FromStr for ViolationId {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let n = s
            .strip_prefix(['V', 'v'])
            .and_then(|d| d.parse::<u8>().ok())
            .filter(|n| (1..=10).contains(n));
        n.map(ViolationId).ok_or_else(|| ConfigError::UnknownViolation(s.to_string()))
    }
}

impl TryFrom<String> for ViolationId {
    type Error = ConfigError;

    fn try_from(s: String) -> Result<Self, ConfigError> {
        s.parse()
    }
}

impl From<ViolationId> for String {
    fn from(v: ViolationId) -> String {
        v.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SeededViolation {
    pub id: ViolationId,
    pub site: Site,
    pub expected: Classification,
    /// Smallest workflow configuration known to expose it: grid
    /// parameters/values for Workflow I, traces/depth for Workflow II.
    pub min_config: &'static str,
    pub description: &'static str,
}
