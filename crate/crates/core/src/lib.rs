//! Model-guided conformance testing for a DAG-based BFT consensus protocol.
//!
//! An executable model ([`model`]) and an implementation hosted in a
//! deterministic simulator ([`sim`], [`consensus`]) are checked against each
//! other in both directions by [`conftest`], with [`mapping`] translating
//! between their vocabularies.

pub mod concrete;
pub mod config;
pub mod conftest;
pub mod consensus;
pub mod error;
pub mod mapping;
pub mod metrics;
pub mod model;
pub mod par;
pub mod sim;
pub mod trace;
pub mod violations;
