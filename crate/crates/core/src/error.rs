use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while reading or validating trace data.
#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trace has no steps")]
    Empty,
    #[error("action {kind}: {msg}")]
    BadAction { kind: String, msg: String },
    #[error("invalid digest {0:?}")]
    BadDigest(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Configuration problems. These are always reported as harness defects.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error("unknown seeded violation {0:?} (expected V1..V10)")]
    UnknownViolation(String),
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
}

/// Failures of the abstraction layer: the mapping table does not cover what
/// the implementation emitted, or the projection rules are inconsistent.
#[derive(Debug, Error)]
pub enum MappingError {
    #[error("concrete action {kind:?} at step {step} is not covered by the mapping table")]
    Unmapped { step: usize, kind: String },
    #[error("action group {group:?} broken at step {step}: found {found:?}")]
    BrokenGroup {
        step: usize,
        group: Vec<String>,
        found: String,
    },
    #[error("action group {0:?} left incomplete at end of trace")]
    IncompleteGroup(Vec<String>),
    #[error("mapping table: {0}")]
    Table(String),
    #[error("param extraction at step {step}: {msg}")]
    Param { step: usize, msg: String },
    #[error("state projection: {0}")]
    Projection(String),
    #[error("concrete trace is empty")]
    EmptyConcrete,
    #[error("abstraction produced no model-level steps")]
    EmptyAbstract,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("event scheduled at {at}us but the clock is already at {now}us")]
    ScheduleInPast { at: u64, now: u64 },
    #[error("unknown node {0}")]
    UnknownNode(u32),
}

/// Anything that stops a workflow without being a protocol violation.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("trace store {path}: {source}")]
    Store {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}
