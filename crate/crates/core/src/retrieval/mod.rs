//! Hybrid retrieval: BM25, dense cosine and late-interaction scoring fused
//! linearly, then reranked by a pluggable cross-scorer.

mod document;
mod fusion;
mod pipeline;
mod rerank;
mod scoring;

pub use document::{env_corpus, exp_corpus, DocPayload, Document, QueryBundle};
pub use fusion::{fuse_and_rank, RetrievalConfig, ScoredDoc};
pub use pipeline::{retrieve, CorpusHandle, IndexedCorpus, RetrievalOutcome};
pub use rerank::{rerank, CrossScorer, TokenF1};
pub use scoring::{
    bm25_term, dense_score, multi_vector_score, sparse_score, try_dense_score, CorpusStats,
    BM25_B, BM25_K1,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("text featurizes to the zero vector")]
    DegenerateEmbedding,
    #[error("text has no tokens")]
    EmptyTokenization,
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Reranker(#[from] RerankerError),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("reranker failed: {0}")]
pub struct RerankerError(pub String);
