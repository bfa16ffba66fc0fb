//! Planner/actuator/evaluator loop over a pluggable decision model, with
//! retrieval from both knowledge stores before every action and ingestion of
//! every emitted fact after it.

mod decision;
mod env;
mod episode;
mod memory;
pub mod remote;

pub use decision::{
    DecisionContext, DecisionModel, EvalVerdict, NoisyScripted, Plan, ScriptedOracle, VerdictStatus,
};
pub use env::{Environment, MicroworldEnv};
pub use episode::{ingest_self_experience, run_episode, AgentConfig, EpisodeResult, Retriever};
pub use memory::{MemoryEvent, MemoryLog, RetrievalKind};
pub use remote::RemoteChat;

use thiserror::Error;

use crate::chat::ChatError;
use crate::distill::DistillError;
use crate::kb::KbError;
use crate::microworld::WorldError;
use crate::retrieval::RetrievalError;

#[derive(Debug, Error)]
pub enum DecisionError {
    #[error(transparent)]
    Backend(#[from] ChatError),
    #[error("malformed decision-model reply ({message}): {response}")]
    Malformed { message: String, response: String },
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("budget must be at least 1")]
    InvalidBudget,
    #[error(transparent)]
    Env(#[from] WorldError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Distill(#[from] DistillError),
}
