//! Dual knowledge stores for text-world agents: a supersession-keyed
//! environmental triple store and an experiential sub-goal store, hybrid
//! retrieval over both, a contrastively trained embedder, dataset builders,
//! trajectory distillation, an agent loop and a small deterministic
//! text world to run it all in.

pub mod agent;
pub mod chat;
pub mod dataset;
pub mod distill;
pub mod embedder;
pub mod experiment;
pub mod kb;
pub mod microworld;
pub mod retrieval;
pub mod scalar;

/// Default-precision embedding model.
pub type Model = embedder::EmbeddingModel<f64>;
/// Default-precision scored retrieval result.
pub type Scored = retrieval::ScoredDoc<f64>;
