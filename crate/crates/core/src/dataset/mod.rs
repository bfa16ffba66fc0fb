//! Training data for the retriever, built by replaying expert trajectories.
//!
//! Query templates are fixed so datasets are reproducible:
//! - environmental: `"{goal}\n{sub-goal name}"`
//! - experiential: rendered triples one per line, then the action sequence
//!   joined with `"; "`.

mod env;
mod exp;
mod file;
mod trajectory;

pub use env::{build_env_dataset, collect_env_knowledge, interacted_objects, is_related, partition, EnvSnapshot};
pub use exp::{build_exp_dataset, flatten, similar_pairs, subgoal_similarity, ExpDataset, ExpDatasetConfig, PairSet};
pub use file::{DatasetFile, DatasetKind, DatasetManifest, DATASET_SCHEMA, DATASET_SCHEMA_VERSION};
pub use trajectory::{StepRecord, SubGoal, Trajectory};

use thiserror::Error;

use crate::embedder::EmbedError;
use crate::kb::{KbError, Triple};
use crate::microworld::WorldError;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("replay of {task} diverged in sub-goal {subgoal} at `{action}`: {reason}")]
    ReplayDivergence {
        task: String,
        subgoal: usize,
        action: String,
        reason: String,
    },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("sub-goal {0} has no experiential unit")]
    MissingExpUnit(usize),
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema version mismatch: file has {found}, expected {expected}")]
    SchemaVersionMismatch { found: u32, expected: u32 },
}

/// Query for environmental retrieval during a sub-goal.
pub fn env_query(goal: &str, subgoal: &str) -> String {
    format!("{goal}\n{subgoal}")
}

/// Query for experiential retrieval: known facts, then what was done.
pub fn exp_query(knowledge: &[Triple], actions: &str) -> String {
    let mut lines: Vec<String> = knowledge.iter().map(Triple::render).collect();
    lines.push(actions.to_string());
    lines.join("\n")
}
