use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{Document, RetrievalError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub k_candidates: usize,
    pub k_final: usize,
    pub w_dense: f64,
    pub w_sparse: f64,
    pub w_multi: f64,
    /// Upper bound applied to raw BM25 before min-max normalization.
    /// Serialized as null when unbounded.
    #[serde(with = "unbounded")]
    pub sparse_cap: f64,
}

mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k_candidates: 32,
            k_final: 5,
            w_dense: 0.4,
            w_sparse: 0.3,
            w_multi: 0.3,
            sparse_cap: f64::INFINITY,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.k_final == 0 || self.k_final > self.k_candidates {
            return Err(RetrievalError::InvalidConfig(format!(
                "need 0 < k_final ({}) <= k_candidates ({})",
                self.k_final, self.k_candidates
            )));
        }
        let ws = [self.w_dense, self.w_sparse, self.w_multi];
        if ws.iter().any(|w| !(*w >= 0.0)) || (ws.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(RetrievalError::InvalidConfig(
                "fusion weights must be non-negative and sum to 1".into(),
            ));
        }
        if !(self.sparse_cap > 0.0) {
            return Err(RetrievalError::InvalidConfig("sparse_cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc<T> {
    pub doc: Document,
    pub sparse: T,
    pub dense: T,
    pub multi: T,
    pub fused: T,
    pub rerank: Option<T>,
}

impl<T: Scalar> ScoredDoc<T> {
    pub fn new(doc: Document, sparse: T, dense: T, multi: T) -> Self {
        Self {
            doc,
            sparse,
            dense,
            multi,
            fused: T::zero(),
            rerank: None,
        }
    }
}

/// Descending by `key`, ties by ascending doc id.
pub(crate) fn by_score_then_id<T: Scalar>(ka: T, kb: T, ida: u64, idb: u64) -> Ordering {
    kb.partial_cmp(&ka)
        .unwrap_or(Ordering::Equal)
        .then(ida.cmp(&idb))
}

/// Min-max normalizes (capped) sparse scores over the pool, computes
/// `fused = w_dense·dense + w_sparse·sparse_norm + w_multi·multi`, sorts by
/// fused descending with ascending-id ties, and keeps `k_candidates`.
pub fn fuse_and_rank<T: Scalar>(
    mut scored: Vec<ScoredDoc<T>>,
    cfg: &RetrievalConfig,
) -> Vec<ScoredDoc<T>> {
    let cap = T::lit(cfg.sparse_cap.min(f64::MAX));
    let capped = |s: T| s.min(cap);
    let (lo, hi) = scored.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), s| {
        (lo.min(capped(s.sparse)), hi.max(capped(s.sparse)))
    });
    let (wd, ws, wm) = (T::lit(cfg.w_dense), T::lit(cfg.w_sparse), T::lit(cfg.w_multi));
    for s in &mut scored {
        let norm = if hi > lo {
            (capped(s.sparse) - lo) / (hi - lo)
        } else if hi > T::zero() {
            T::one()
        } else {
            T::zero()
        };
        s.fused = wd * s.dense + ws * norm + wm * s.multi;
    }
    scored.sort_by(|a, b| by_score_then_id(a.fused, b.fused, a.doc.id, b.doc.id));
    scored.truncate(cfg.k_candidates);
    scored
}
