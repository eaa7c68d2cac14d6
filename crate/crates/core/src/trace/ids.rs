use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use crate::error::TraceError;

pub type NodeId = u32;
pub type Round = u64;
pub type Wave = u64;

/// The one hash function used for state digests, trace hashes, vertex ids
/// and block digests.
pub type Hasher = Sha256;

/// A 256-bit digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Digest(Hasher::digest(bytes).into())
    }

    pub fn from_hasher(h: Hasher) -> Self {
        Digest(h.finalize().into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..6])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Digest {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| TraceError::BadDigest(s.to_string()))?;
        Ok(Digest(out))
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Content-derived vertex identifier (128 bits of the vertex digest).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VertexId(pub [u8; 16]);

impl VertexId {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v:{}", hex::encode(&self.0[..4]))
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for VertexId {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 16];
        hex::decode_to_slice(s, &mut out).map_err(|_| TraceError::BadDigest(s.to_string()))?;
        Ok(VertexId(out))
    }
}

impl Serialize for VertexId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for VertexId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Vertex identity: digest of (creator, round, sorted parents, salt).
///
/// Honest vertices use salt 0; an equivocating duplicate uses salt 1. The
/// model and the implementation both derive ids through this function, so
/// equal ids imply equal parent sets.
pub fn vertex_id(creator: NodeId, round: Round, parents: &[VertexId], salt: u8) -> VertexId {
    debug_assert!(parents.windows(2).all(|w| w[0] < w[1]), "parents must be sorted");
    let mut h = Hasher::new();
    h.update(b"vertex");
    h.update(creator.to_be_bytes());
    h.update(round.to_be_bytes());
    h.update((parents.len() as u64).to_be_bytes());
    for p in parents {
        h.update(p.0);
    }
    h.update([salt]);
    let full: [u8; 32] = h.finalize().into();
    let mut id = [0u8; 16];
    id.copy_from_slice(&full[..16]);
    VertexId(id)
}

/// Digest of a committed block: the wave number and the ordered vertex list.
pub fn block_digest(wave: Wave, vertices: &[VertexId]) -> Digest {
    let mut h = Hasher::new();
    h.update(b"block");
    h.update(wave.to_be_bytes());
    h.update((vertices.len() as u64).to_be_bytes());
    for v in vertices {
        h.update(v.0);
    }
    Digest::from_hasher(h)
}
