use std::collections::HashMap;

use super::fusion::by_score_then_id;
use super::{RerankerError, ScoredDoc};
use crate::embedder::tokenize;
use crate::scalar::Scalar;

/// Second-stage `(query, doc) -> score` model.
pub trait CrossScorer<T: Scalar>: Send + Sync {
    fn score(&self, query: &str, doc: &str) -> Result<T, RerankerError>;
}

/// Token-multiset F1 between query and document.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenF1;

impl<T: Scalar> CrossScorer<T> for TokenF1 {
    fn score(&self, query: &str, doc: &str) -> Result<T, RerankerError> {
        let q = tokenize(query);
        let d = tokenize(doc);
        if q.is_empty() || d.is_empty() {
            return Ok(T::zero());
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in &q {
            *counts.entry(t).or_insert(0) += 1;
        }
        let mut common = 0usize;
        for t in &d {
            if let Some(c) = counts.get_mut(t.as_str()) {
                if *c > 0 {
                    *c -= 1;
                    common += 1;
                }
            }
        }
        // F1 = 2PR/(P+R) = 2c / (|q| + |d|), evaluated as one division.
        Ok(T::lit(2.0 * common as f64 / (q.len() + d.len()) as f64))
    }
}

/// Re-sorts by cross-scorer output (ties by ascending id) and keeps `k_final`.
pub fn rerank<T: Scalar, S: CrossScorer<T> + ?Sized>(
    query_text: &str,
    candidates: Vec<ScoredDoc<T>>,
    scorer: &S,
    k_final: usize,
) -> Result<Vec<ScoredDoc<T>>, RerankerError> {
    let mut out = candidates;
    for c in &mut out {
        c.rerank = Some(scorer.score(query_text, &c.doc.text)?);
    }
    out.sort_by(|a, b| {
        by_score_then_id(
            a.rerank.unwrap_or_else(T::zero),
            b.rerank.unwrap_or_else(T::zero),
            a.doc.id,
            b.doc.id,
        )
    });
    out.truncate(k_final);
    Ok(out)
}
