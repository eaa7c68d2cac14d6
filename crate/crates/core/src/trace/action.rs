use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ids::{Digest, Hasher, NodeId, Round, VertexId, Wave};
use crate::error::TraceError;

/// A parameter value: integers for node ids, rounds and waves; hex strings
/// for vertex ids and block digests.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Int(u64),
    Text(String),
}

impl Scalar {
    pub fn as_int(&self) -> Option<u64> {
        match self {
            Scalar::Int(v) => Some(*v),
            Scalar::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Scalar::Text(s) => Some(s),
            Scalar::Int(_) => None,
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Int(v) => write!(f, "{v}"),
            Scalar::Text(s) => f.write_str(s),
        }
    }
}

impl From<u64> for Scalar {
    fn from(v: u64) -> Self {
        Scalar::Int(v)
    }
}

impl From<u32> for Scalar {
    fn from(v: u32) -> Self {
        Scalar::Int(v as u64)
    }
}

impl From<VertexId> for Scalar {
    fn from(v: VertexId) -> Self {
        Scalar::Text(v.to_hex())
    }
}

impl From<Digest> for Scalar {
    fn from(v: Digest) -> Self {
        Scalar::Text(v.to_hex())
    }
}

pub type Params = BTreeMap<String, Scalar>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    CreateVertex,
    ReceiveVertex,
    NextRound,
    CommitLeader,
    Equivocate,
    Reconfigure,
}

impl ActionKind {
    pub const ALL: [ActionKind; 6] = [
        ActionKind::CreateVertex,
        ActionKind::ReceiveVertex,
        ActionKind::NextRound,
        ActionKind::CommitLeader,
        ActionKind::Equivocate,
        ActionKind::Reconfigure,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::CreateVertex => "CreateVertex",
            ActionKind::ReceiveVertex => "ReceiveVertex",
            ActionKind::NextRound => "NextRound",
            ActionKind::CommitLeader => "CommitLeader",
            ActionKind::Equivocate => "Equivocate",
            ActionKind::Reconfigure => "Reconfigure",
        }
    }

    /// Parameter names each kind requires, in canonical order.
    pub fn required_params(self) -> &'static [&'static str] {
        match self {
            ActionKind::CreateVertex => &["p", "r", "v"],
            ActionKind::ReceiveVertex => &["p", "q", "r", "v"],
            ActionKind::NextRound => &["p"],
            ActionKind::CommitLeader => &["block", "p", "v", "w"],
            ActionKind::Equivocate => &["b", "r", "v"],
            ActionKind::Reconfigure => &["n"],
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActionKind {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| TraceError::BadAction {
                kind: s.to_string(),
                msg: "unknown action kind".into(),
            })
    }
}

/// A model-level action. Variant order is the canonical kind order used when
/// sorting enabled-action sets.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawAction", into = "RawAction")]
pub enum AbstractAction {
    CreateVertex {
        p: NodeId,
        r: Round,
        v: VertexId,
    },
    ReceiveVertex {
        p: NodeId,
        q: NodeId,
        r: Round,
        v: VertexId,
    },
    NextRound {
        p: NodeId,
    },
    CommitLeader {
        p: NodeId,
        w: Wave,
        v: VertexId,
        block: Digest,
    },
    Equivocate {
        b: NodeId,
        r: Round,
        v: VertexId,
    },
    Reconfigure {
        n: NodeId,
    },
}

impl AbstractAction {
    pub fn kind(&self) -> ActionKind {
        match self {
            AbstractAction::CreateVertex { .. } => ActionKind::CreateVertex,
            AbstractAction::ReceiveVertex { .. } => ActionKind::ReceiveVertex,
            AbstractAction::NextRound { .. } => ActionKind::NextRound,
            AbstractAction::CommitLeader { .. } => ActionKind::CommitLeader,
            AbstractAction::Equivocate { .. } => ActionKind::Equivocate,
            AbstractAction::Reconfigure { .. } => ActionKind::Reconfigure,
        }
    }

    /// The node whose local state the action changes.
    pub fn actor(&self) -> NodeId {
        match *self {
            AbstractAction::CreateVertex { p, .. }
            | AbstractAction::ReceiveVertex { p, .. }
            | AbstractAction::NextRound { p }
            | AbstractAction::CommitLeader { p, .. } => p,
            AbstractAction::Equivocate { b, .. } => b,
            AbstractAction::Reconfigure { n } => n,
        }
    }

    pub fn params(&self) -> Params {
        let mut m = Params::new();
        let mut put = |k: &str, v: Scalar| {
            m.insert(k.to_string(), v);
        };
        match *self {
            AbstractAction::CreateVertex { p, r, v } => {
                put("p", p.into());
                put("r", r.into());
                put("v", v.into());
            }
            AbstractAction::ReceiveVertex { p, q, r, v } => {
                put("p", p.into());
                put("q", q.into());
                put("r", r.into());
                put("v", v.into());
            }
            AbstractAction::NextRound { p } => put("p", p.into()),
            AbstractAction::CommitLeader { p, w, v, block } => {
                put("p", p.into());
                put("w", w.into());
                put("v", v.into());
                put("block", block.into());
            }
            AbstractAction::Equivocate { b, r, v } => {
                put("b", b.into());
                put("r", r.into());
                put("v", v.into());
            }
            AbstractAction::Reconfigure { n } => put("n", n.into()),
        }
        m
    }

    /// Builds a typed action, requiring exactly the parameter names of `kind`.
    pub fn from_params(kind: ActionKind, params: &Params) -> Result<Self, TraceError> {
        let bad = |msg: String| TraceError::BadAction {
            kind: kind.name().to_string(),
            msg,
        };
        let required = kind.required_params();
        if params.len() != required.len() || !required.iter().all(|k| params.contains_key(*k)) {
            let got: Vec<_> = params.keys().cloned().collect();
            return Err(bad(format!("expected params {required:?}, got {got:?}")));
        }
        let int = |k: &str| -> Result<u64, TraceError> {
            params[k]
                .as_int()
                .ok_or_else(|| bad(format!("param {k} must be an integer")))
        };
        let node = |k: &str| -> Result<NodeId, TraceError> {
            let v = int(k)?;
            NodeId::try_from(v).map_err(|_| bad(format!("param {k} out of node-id range")))
        };
        let text = |k: &str| -> Result<&str, TraceError> {
            params[k]
                .as_text()
                .ok_or_else(|| bad(format!("param {k} must be a hex string")))
        };
        let vid = |k: &str| -> Result<VertexId, TraceError> { text(k)?.parse() };
        Ok(match kind {
            ActionKind::CreateVertex => AbstractAction::CreateVertex {
                p: node("p")?,
                r: int("r")?,
                v: vid("v")?,
            },
            ActionKind::ReceiveVertex => AbstractAction::ReceiveVertex {
                p: node("p")?,
                q: node("q")?,
                r: int("r")?,
                v: vid("v")?,
            },
            ActionKind::NextRound => AbstractAction::NextRound { p: node("p")? },
            ActionKind::CommitLeader => AbstractAction::CommitLeader {
                p: node("p")?,
                w: int("w")?,
                v: vid("v")?,
                block: text("block")?.parse()?,
            },
            ActionKind::Equivocate => AbstractAction::Equivocate {
                b: node("b")?,
                r: int("r")?,
                v: vid("v")?,
            },
            ActionKind::Reconfigure => AbstractAction::Reconfigure { n: node("n")? },
        })
    }

    /// Feeds an unambiguous encoding of the action into `h`.
    pub fn hash_into(&self, h: &mut Hasher) {
        use sha2::Digest as _;
        h.update(self.kind().name().as_bytes());
        h.update([0]);
        for (k, v) in self.params() {
            h.update(k.as_bytes());
            h.update([0]);
            match v {
                Scalar::Int(i) => {
                    h.update([1]);
                    h.update(i.to_be_bytes());
                }
                Scalar::Text(s) => {
                    h.update([2]);
                    h.update((s.len() as u64).to_be_bytes());
                    h.update(s.as_bytes());
                }
            }
        }
    }
}

impl fmt::Display for AbstractAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbstractAction::CreateVertex { p, r, v } => write!(f, "CreateVertex(p={p}, r={r}, v={v:?})"),
            AbstractAction::ReceiveVertex { p, q, r, v } => {
                write!(f, "ReceiveVertex(p={p}, q={q}, r={r}, v={v:?})")
            }
            AbstractAction::NextRound { p } => write!(f, "NextRound(p={p})"),
            AbstractAction::CommitLeader { p, w, v, block } => {
                write!(f, "CommitLeader(p={p}, w={w}, v={v:?}, block={})", block.short())
            }
            AbstractAction::Equivocate { b, r, v } => write!(f, "Equivocate(b={b}, r={r}, v={v:?})"),
            AbstractAction::Reconfigure { n } => write!(f, "Reconfigure(n={n})"),
        }
    }
}

/// Wire form `{kind, params}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAction {
    pub kind: String,
    pub params: Params,
}

impl TryFrom<RawAction> for AbstractAction {
    type Error = TraceError;

    fn try_from(raw: RawAction) -> Result<Self, Self::Error> {
        let kind: ActionKind = raw.kind.parse()?;
        AbstractAction::from_params(kind, &raw.params)
    }
}

impl From<AbstractAction> for RawAction {
    fn from(a: AbstractAction) -> Self {
        RawAction {
            kind: a.kind().name().to_string(),
            params: a.params(),
        }
    }
}
