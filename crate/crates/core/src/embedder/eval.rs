use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{EmbedError, TextEncoder};
use crate::retrieval::Document;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub query: String,
    pub relevant: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recall {
    pub value: f64,
    pub hits: usize,
    pub total: usize,
    pub warnings: Vec<String>,
}

/// Fraction of queries whose dense top-k (cosine, ties by ascending id)
/// contains at least one relevant document. An empty eval set scores 0.
pub fn recall_at_k<T: Scalar, E: TextEncoder<T> + ?Sized>(
    encoder: &E,
    eval_set: &[EvalQuery],
    corpus: &[Document],
    k: usize,
) -> Result<Recall, EmbedError> {
    let ids: BTreeSet<u64> = corpus.iter().map(|d| d.id).collect();
    for q in eval_set {
        if let Some(&bad) = q.relevant.iter().find(|id| !ids.contains(id)) {
            return Err(EmbedError::UnknownDocId(bad));
        }
    }
    if eval_set.is_empty() {
        log::warn!("recall@{k}: empty eval set");
        return Ok(Recall {
            value: 0.0,
            hits: 0,
            total: 0,
            warnings: vec!["EmptyEvalSet".into()],
        });
    }
    let doc_embs: Vec<_> = corpus.iter().map(|d| (d.id, encoder.embed(&d.text))).collect();
    let mut hits = 0;
    for q in eval_set {
        let qe = encoder.embed(&q.query);
        let mut ranked: Vec<(T, u64)> = doc_embs
            .iter()
            .map(|(id, e)| (qe.cosine(e).unwrap_or_else(T::zero), *id))
            .collect();
        ranked.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        if ranked.iter().take(k).any(|(_, id)| q.relevant.contains(id)) {
            hits += 1;
        }
    }
    Ok(Recall {
        value: hits as f64 / eval_set.len() as f64,
        hits,
        total: eval_set.len(),
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::EmbeddingModel;
    use crate::retrieval::DocPayload;

    fn corpus(texts: &[&str]) -> Vec<Document> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document {
                id: i as u64 * 10,
                text: t.to_string(),
                payload: DocPayload::ExpUnit(i),
            })
            .collect()
    }

    #[test]
    fn k_covering_corpus_is_perfect() {
        let m = EmbeddingModel::<f64>::new(1);
        let c = corpus(&["pot", "stove", "frog"]);
        let eval = vec![
            EvalQuery { query: "lamp".into(), relevant: vec![20] },
            EvalQuery { query: "pot".into(), relevant: vec![0, 10] },
        ];
        assert_eq!(recall_at_k(&m, &eval, &c, 3).unwrap().value, 1.0);
        let single = corpus(&["frog"]);
        let eval = vec![EvalQuery { query: "anything".into(), relevant: vec![0] }];
        assert_eq!(recall_at_k(&m, &eval, &single, 1).unwrap().value, 1.0);
    }

    #[test]
    fn empty_eval_and_unknown_ids() {
        let m = EmbeddingModel::<f64>::new(1);
        let c = corpus(&["pot"]);
        let r = recall_at_k(&m, &[], &c, 1).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.warnings, ["EmptyEvalSet"]);
        let eval = vec![EvalQuery { query: "x".into(), relevant: vec![99] }];
        assert!(matches!(recall_at_k(&m, &eval, &c, 1), Err(EmbedError::UnknownDocId(99))));
    }
}
