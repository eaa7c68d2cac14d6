//! Shared vocabulary of model and simulator: actions, abstract states, traces
//! and the trace-hash store.

pub mod action;
pub mod ids;
pub mod state;
pub mod store;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::Digest as _;

pub use action::{AbstractAction, ActionKind, Params, RawAction, Scalar};
pub use ids::{block_digest, vertex_id, Digest, Hasher, NodeId, Round, VertexId, Wave};
pub use state::{AbstractState, LeaderEntry, NodeView};
pub use store::TraceStore;

use crate::error::TraceError;

pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceSource {
    Model,
    Simulator,
}

/// Provenance record. Not part of the trace hash.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub source: TraceSource,
    pub seed: u64,
    pub config_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub action: AbstractAction,
    pub post_digest: Digest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_state: Option<AbstractState>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub meta: TraceMeta,
    pub init_digest: Digest,
    pub steps: Vec<TraceStep>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    source: TraceSource,
    seed: u64,
    config_id: String,
    init_digest: Digest,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepLine {
    action: RawAction,
    post_digest: Digest,
    #[serde(default)]
    post_state: Option<AbstractState>,
}

impl Trace {
    /// Hash over the initial digest and the ordered (action, post digest)
    /// pairs. Metadata and attached full states are excluded.
    pub fn hash(&self) -> Digest {
        let mut h = Hasher::new();
        h.update(b"trace");
        h.update(self.init_digest.0);
        h.update((self.steps.len() as u64).to_be_bytes());
        for step in &self.steps {
            step.action.hash_into(&mut h);
            h.update(step.post_digest.0);
        }
        Digest::from_hasher(h)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn actions(&self) -> impl Iterator<Item = &AbstractAction> {
        self.steps.iter().map(|s| &s.action)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = Header {
            version: TRACE_FORMAT_VERSION,
            source: self.meta.source,
            seed: self.meta.seed,
            config_id: self.meta.config_id.clone(),
            init_digest: self.init_digest,
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for step in &self.steps {
            serde_json::to_writer(&mut w, step)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    /// Parses the JSON Lines form. Errors carry the 1-based line number.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Trace, TraceError> {
        let mut lines = r.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(s) if s.trim().is_empty() => None,
            other => Some((i + 1, other)),
        });
        let parse = |line: usize, e: serde_json::Error| TraceError::Parse {
            line,
            msg: e.to_string(),
        };
        let (line, text) = lines.next().ok_or(TraceError::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let header: Header = serde_json::from_str(&text?).map_err(|e| parse(line, e))?;
        if header.version != TRACE_FORMAT_VERSION {
            return Err(TraceError::Parse {
                line,
                msg: format!("unsupported trace version {}", header.version),
            });
        }
        let mut steps = Vec::new();
        for (line, text) in lines {
            let raw: StepLine = serde_json::from_str(&text?).map_err(|e| parse(line, e))?;
            let action = AbstractAction::try_from(raw.action).map_err(|e| TraceError::Parse {
                line,
                msg: e.to_string(),
            })?;
            if let Some(st) = &raw.post_state {
                if st.compute_digest() != raw.post_digest {
                    return Err(TraceError::Parse {
                        line,
                        msg: "post_state does not match post_digest".into(),
                    });
                }
            }
            steps.push(TraceStep {
                action,
                post_digest: raw.post_digest,
                post_state: raw.post_state,
            });
        }
        if steps.is_empty() {
            return Err(TraceError::Empty);
        }
        Ok(Trace {
            meta: TraceMeta {
                source: header.source,
                seed: header.seed,
                config_id: header.config_id,
            },
            init_digest: header.init_digest,
            steps,
        })
    }

    pub fn from_jsonl(s: &str) -> Result<Trace, TraceError> {
        Trace::read_jsonl(s.as_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Trace, TraceError> {
        let f = std::fs::File::open(path)?;
        Trace::read_jsonl(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: &std::path::Path) -> std::io::Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_jsonl(&mut w)?;
        w.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Trace {
        let mut st = AbstractState::new([]);
        st.set_round(0, 1);
        let init = st.digest();
        st.set_round(0, 2);
        Trace {
            meta: TraceMeta {
                source: TraceSource::Model,
                seed: 3,
                config_id: "c".into(),
            },
            init_digest: init,
            steps: vec![TraceStep {
                action: AbstractAction::NextRound { p: 0 },
                post_digest: st.digest(),
                post_state: Some(st),
            }],
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let t = tiny();
        let text = t.to_jsonl();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().next().unwrap().contains("\"init_digest\""));
        assert_eq!(Trace::from_jsonl(&text).unwrap(), t);
    }

    #[test]
    fn hash_ignores_meta_and_states() {
        let a = tiny();
        let mut b = a.clone();
        b.meta.seed = 99;
        b.meta.source = TraceSource::Simulator;
        b.steps[0].post_state = None;
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn truncated_input_is_a_parse_error() {
        let text = tiny().to_jsonl();
        let cut = &text[..text.len() - 10];
        match Trace::from_jsonl(cut) {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let header_only = text.lines().next().unwrap();
        assert!(matches!(Trace::from_jsonl(header_only), Err(TraceError::Empty)));
    }

    #[test]
    fn state_digest_mismatch_rejected() {
        let mut t = tiny();
        t.steps[0].post_digest = Digest::of(b"x");
        assert!(Trace::from_jsonl(&t.to_jsonl()).is_err());
    }
}
