//! Environmental triple store and experiential sub-goal store.
//!
//! The environmental store keeps at most one triple per `(subject, relation)`
//! key; a newer write replaces the stored triple. The experiential store is an
//! append-only list of sub-goal units addressed by dense integer ids.

mod env;
mod exp;
mod persist;
mod registry;
mod types;

pub use env::{EnvKnowledgeBase, IngestStats, SharedEnvKb, Upsert};
pub use exp::ExpKnowledgeBase;
pub use persist::{KnowledgeBases, KB_SCHEMA, KB_SCHEMA_VERSION};
pub use registry::RelationRegistry;
pub use types::{
    normalize_text, Channel, EntityId, Provenance, Relation, SubGoalUnit, Triple, TripleValue,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("entity name is empty after normalization")]
    EmptyEntity,
    #[error("relation name is empty after normalization")]
    EmptyRelation,
    #[error("relation `{0}` is not registered")]
    UnregisteredRelation(String),
    #[error("relation `{name}` is registered as {registered:?}, not {requested:?}")]
    ChannelConflict {
        name: String,
        registered: Channel,
        requested: Channel,
    },
    #[error("stale write for ({subject}, {relation}): stored step {stored}, incoming step {incoming}")]
    StaleWrite {
        subject: String,
        relation: String,
        stored: u64,
        incoming: u64,
    },
    #[error("fact carries step {found} but the batch is for step {expected}")]
    StepMismatch { expected: u64, found: u64 },
    #[error("invalid sub-goal unit: {0}")]
    InvalidUnit(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema version mismatch: file has {found}, expected {expected}")]
    SchemaVersionMismatch { found: u32, expected: u32 },
    #[error("relation registry: {0}")]
    Registry(String),
}
