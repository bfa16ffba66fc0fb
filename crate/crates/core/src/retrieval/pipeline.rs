use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use super::scoring::{bm25_with_counts, clamp_unit, distinct_terms, term_counts};
use super::{
    fuse_and_rank, rerank, CorpusStats, CrossScorer, Document, QueryBundle, RetrievalConfig,
    RetrievalError, ScoredDoc,
};
use crate::embedder::{tokenize, Embedding, TextEncoder};
use crate::scalar::{dot, Scalar};

struct IndexedDoc<T> {
    doc: Document,
    tokens: Vec<String>,
    embedding: Embedding<T>,
    token_vectors: Vec<Vec<T>>,
}

/// Corpus with per-document tokens, embeddings and token vectors precomputed
/// for one encoder. Rebuild whenever the encoder or the corpus changes.
pub struct IndexedCorpus<T> {
    docs: Vec<IndexedDoc<T>>,
    stats: CorpusStats,
}

impl<T: Scalar> IndexedCorpus<T> {
    pub fn build<E: TextEncoder<T> + ?Sized>(docs: Vec<Document>, encoder: &E) -> Self {
        let stats = CorpusStats::build(docs.iter().map(|d| d.text.as_str()));
        let docs = docs
            .into_iter()
            .map(|doc| IndexedDoc {
                tokens: tokenize(&doc.text),
                embedding: encoder.embed(&doc.text),
                token_vectors: encoder.token_vectors(&doc.text),
                doc,
            })
            .collect();
        Self { docs, stats }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn stats(&self) -> &CorpusStats {
        &self.stats
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.docs.iter().map(|d| &d.doc)
    }
}

/// Final ranking plus the reranker failure, if the pipeline fell back to fused order.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalOutcome<T> {
    pub docs: Vec<ScoredDoc<T>>,
    pub reranker_fallback: Option<String>,
}

/// Scores every document on all three legs, fuses, keeps `k_candidates`,
/// then reranks down to `k_final`.
pub fn retrieve<T, E, S>(
    corpus: &IndexedCorpus<T>,
    bundle: &QueryBundle,
    encoder: &E,
    scorer: &S,
    cfg: &RetrievalConfig,
) -> Result<RetrievalOutcome<T>, RetrievalError>
where
    T: Scalar,
    E: TextEncoder<T> + ?Sized,
    S: CrossScorer<T> + ?Sized,
{
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    let query = bundle.query_text();
    let terms = distinct_terms(&query);
    let q_emb = encoder.embed(&query);
    let q_tokens = tokenize(&query);
    let q_vecs = encoder.token_vectors(&query);

    // Repeated query tokens share a vector; compute each one's maximum once per document.
    let mut slot_of: HashMap<&str, usize> = HashMap::new();
    let mut slots: Vec<usize> = Vec::with_capacity(q_vecs.len());
    let mut unique: Vec<&Vec<T>> = Vec::new();
    if q_vecs.len() == q_tokens.len() {
        for (tok, v) in q_tokens.iter().zip(&q_vecs) {
            let next = unique.len();
            let slot = *slot_of.entry(tok.as_str()).or_insert(next);
            if slot == next {
                unique.push(v);
            }
            slots.push(slot);
        }
    } else {
        unique = q_vecs.iter().collect();
        slots = (0..q_vecs.len()).collect();
    }

    let scored: Vec<ScoredDoc<T>> = corpus
        .docs
        .iter()
        .map(|d| {
            let tf = term_counts(&d.tokens);
            let sparse = T::lit(bm25_with_counts(&terms, &tf, d.tokens.len(), &corpus.stats));
            let dense = q_emb.cosine(&d.embedding).unwrap_or_else(T::zero);
            let multi = if slots.is_empty() || d.token_vectors.is_empty() {
                T::zero()
            } else {
                let best: Vec<T> = unique
                    .iter()
                    .map(|q| {
                        d.token_vectors
                            .iter()
                            .map(|v| clamp_unit(dot(q, v)))
                            .fold(T::neg_infinity(), T::max)
                    })
                    .collect();
                let total: T = slots.iter().map(|&s| best[s]).sum();
                total / T::lit(slots.len() as f64)
            };
            ScoredDoc::new(d.doc.clone(), sparse, dense, multi)
        })
        .collect();

    let candidates = fuse_and_rank(scored, cfg);
    match rerank(&query, candidates.clone(), scorer, cfg.k_final) {
        Ok(docs) => Ok(RetrievalOutcome {
            docs,
            reranker_fallback: None,
        }),
        Err(e) => {
            log::warn!("{e}; falling back to fused order");
            let mut docs = candidates;
            docs.truncate(cfg.k_final);
            Ok(RetrievalOutcome {
                docs,
                reranker_fallback: Some(e.0),
            })
        }
    }
}

/// Atomically swappable corpus snapshot; readers keep the `Arc` they took.
pub struct CorpusHandle<T> {
    current: RwLock<Arc<IndexedCorpus<T>>>,
}

impl<T: Scalar> CorpusHandle<T> {
    pub fn new(corpus: IndexedCorpus<T>) -> Self {
        Self {
            current: RwLock::new(Arc::new(corpus)),
        }
    }

    pub fn snapshot(&self) -> Arc<IndexedCorpus<T>> {
        Arc::clone(&self.current.read().expect("corpus lock poisoned"))
    }

    pub fn swap(&self, corpus: IndexedCorpus<T>) -> Arc<IndexedCorpus<T>> {
        let mut guard = self.current.write().expect("corpus lock poisoned");
        std::mem::replace(&mut *guard, Arc::new(corpus))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::EmbeddingModel;
    use crate::retrieval::{DocPayload, RerankerError, TokenF1};

    fn docs(texts: &[&str]) -> Vec<Document> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document {
                id: i as u64,
                text: t.to_string(),
                payload: DocPayload::ExpUnit(i),
            })
            .collect()
    }

    struct Failing;
    impl CrossScorer<f64> for Failing {
        fn score(&self, _: &str, _: &str) -> Result<f64, RerankerError> {
            Err(RerankerError("offline".into()))
        }
    }

    #[test]
    fn single_doc_corpus_always_returned() {
        let m = EmbeddingModel::<f64>::new(0);
        let c = IndexedCorpus::build(docs(&["frog | located_in | pond"]), &m);
        let out = retrieve(&c, &QueryBundle::new("boil water", "zzz"), &m, &TokenF1, &RetrievalConfig::default()).unwrap();
        assert_eq!(out.docs.len(), 1);
        assert_eq!(out.docs[0].doc.id, 0);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let m = EmbeddingModel::<f64>::with_dims(64, 4, 0);
        let c = IndexedCorpus::build(vec![], &m);
        assert!(matches!(
            retrieve(&c, &QueryBundle::new("a", "b"), &m, &TokenF1, &RetrievalConfig::default()),
            Err(RetrievalError::EmptyCorpus)
        ));
    }

    #[test]
    fn duplicates_adjacent_lower_id_first() {
        let m = EmbeddingModel::<f64>::new(0);
        let c = IndexedCorpus::build(
            docs(&["lamp | state | off", "pot | located_in | stove", "pot | located_in | stove", "frog"]),
            &m,
        );
        let out = retrieve(&c, &QueryBundle::new("where is the pot", "stove"), &m, &TokenF1, &RetrievalConfig::default()).unwrap();
        let ids: Vec<u64> = out.docs.iter().map(|d| d.doc.id).collect();
        assert_eq!(&ids[..2], &[1, 2]);
    }

    #[test]
    fn reranker_failure_falls_back_to_fused_order() {
        let m = EmbeddingModel::<f64>::new(0);
        let c = IndexedCorpus::build(docs(&["a b", "b c", "c d", "d e"]), &m);
        let cfg = RetrievalConfig {
            k_final: 2,
            ..RetrievalConfig::default()
        };
        let out = retrieve(&c, &QueryBundle::new("a", "b"), &m, &Failing, &cfg).unwrap();
        assert_eq!(out.reranker_fallback.as_deref(), Some("offline"));
        assert_eq!(out.docs.len(), 2);
        assert!(out.docs[0].fused >= out.docs[1].fused);
        assert!(out.docs.iter().all(|d| d.rerank.is_none()));
    }

    #[test]
    fn snapshot_swap_keeps_old_readers_valid() {
        let m = EmbeddingModel::<f64>::with_dims(64, 4, 0);
        let h = CorpusHandle::new(IndexedCorpus::build(docs(&["a"]), &m));
        let old = h.snapshot();
        h.swap(IndexedCorpus::build(docs(&["a", "b"]), &m));
        assert_eq!(old.len(), 1);
        assert_eq!(h.snapshot().len(), 2);
    }
}
