//! Implementation-level traces: `impl.*` actions with the state changes each
//! one made, in the same JSON Lines envelope as abstract traces.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::TraceError;
use crate::trace::{Digest, NodeId, Params, Round, Scalar, TraceSource, VertexId, Wave, TRACE_FORMAT_VERSION};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcreteAction {
    pub kind: String,
    pub params: Params,
}

impl ConcreteAction {
    pub fn new(kind: &str) -> Self {
        ConcreteAction {
            kind: kind.to_string(),
            params: Params::new(),
        }
    }

    pub fn with(mut self, name: &str, value: impl Into<Scalar>) -> Self {
        self.params.insert(name.to_string(), value.into());
        self
    }
}

/// One change to a named field of a node's concrete state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum DeltaOp {
    /// `field[round][creator] = vertex`
    MapInsert {
        round: Round,
        creator: NodeId,
        vertex: VertexId,
    },
    /// `field = value`
    Set { value: u64 },
    /// `field.push((wave, vertex))`
    Append { wave: Wave, vertex: VertexId },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDelta {
    pub node: NodeId,
    pub field: String,
    #[serde(flatten)]
    pub op: DeltaOp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcreteStep {
    /// Virtual time in microseconds of the event that produced the step.
    pub time: u64,
    pub action: ConcreteAction,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub delta: Vec<StateDelta>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcreteHeader {
    pub version: u32,
    pub source: TraceSource,
    pub seed: u64,
    pub config_id: String,
    /// Hash of `init`.
    pub init_digest: Digest,
    /// Initial concrete state, as deltas from empty.
    pub init: Vec<StateDelta>,
    /// Nodes designated faulty for this run.
    pub faulty: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConcreteTrace {
    pub header: ConcreteHeader,
    pub steps: Vec<ConcreteStep>,
}

pub fn init_digest(init: &[StateDelta]) -> Digest {
    Digest::of(&serde_json::to_vec(init).expect("deltas serialize"))
}

impl ConcreteTrace {
    pub fn new(seed: u64, config_id: String, init: Vec<StateDelta>, faulty: Vec<NodeId>) -> Self {
        ConcreteTrace {
            header: ConcreteHeader {
                version: TRACE_FORMAT_VERSION,
                source: TraceSource::Simulator,
                seed,
                config_id,
                init_digest: init_digest(&init),
                init,
                faulty,
            },
            steps: Vec::new(),
        }
    }

    /// Content hash over the whole file form.
    pub fn digest(&self) -> Digest {
        Digest::of(self.to_jsonl().as_bytes())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for s in &self.steps {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, TraceError> {
        let mut header: Option<ConcreteHeader> = None;
        let mut steps = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse = |e: serde_json::Error| TraceError::Parse {
                line: i + 1,
                msg: e.to_string(),
            };
            match header {
                None => {
                    let h: ConcreteHeader = serde_json::from_str(&line).map_err(parse)?;
                    if h.init_digest != init_digest(&h.init) {
                        return Err(TraceError::Parse {
                            line: i + 1,
                            msg: "init_digest does not match init".into(),
                        });
                    }
                    header = Some(h);
                }
                Some(_) => steps.push(serde_json::from_str(&line).map_err(parse)?),
            }
        }
        let header = header.ok_or(TraceError::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        Ok(ConcreteTrace { header, steps })
    }

    pub fn load(path: &Path) -> Result<Self, TraceError> {
        let f = std::fs::File::open(path)?;
        ConcreteTrace::read_jsonl(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()
    }
}
