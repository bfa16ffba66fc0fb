use std::collections::HashMap;

use super::RetrievalError;
use crate::embedder::{tokenize, TextEncoder};
use crate::scalar::{dot, Scalar};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

/// Document frequencies and length statistics over one corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub avg_len: f64,
    pub df: HashMap<String, usize>,
}

impl CorpusStats {
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut stats = Self::default();
        let mut total_len = 0usize;
        for text in texts {
            let toks = tokenize(text);
            total_len += toks.len();
            stats.n_docs += 1;
            let mut seen: Vec<&String> = toks.iter().collect();
            seen.sort();
            seen.dedup();
            for t in seen {
                *stats.df.entry(t.clone()).or_insert(0) += 1;
            }
        }
        if stats.n_docs > 0 {
            stats.avg_len = total_len as f64 / stats.n_docs as f64;
        }
        stats
    }

    pub fn df(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }
}

/// One term's BM25 contribution with the non-negative `ln(1 + ...)` idf.
pub fn bm25_term(tf: usize, df: usize, n_docs: usize, doc_len: usize, avg_len: f64) -> f64 {
    if tf == 0 {
        return 0.0;
    }
    let n = n_docs as f64;
    let df = df as f64;
    let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
    let tf = tf as f64;
    let norm = 1.0 - BM25_B + BM25_B * doc_len as f64 / avg_len.max(f64::MIN_POSITIVE);
    idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * norm)
}

/// Distinct query tokens in first-occurrence order.
pub(crate) fn distinct_terms(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for t in tokenize(text) {
        if !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

pub(crate) fn term_counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut tf = HashMap::new();
    for t in tokens {
        *tf.entry(t.as_str()).or_insert(0) += 1;
    }
    tf
}

pub(crate) fn bm25_with_counts(
    terms: &[String],
    tf: &HashMap<&str, usize>,
    doc_len: usize,
    stats: &CorpusStats,
) -> f64 {
    terms
        .iter()
        .map(|t| {
            let f = tf.get(t.as_str()).copied().unwrap_or(0);
            bm25_term(f, stats.df(t), stats.n_docs, doc_len, stats.avg_len)
        })
        .sum()
}

/// BM25 (k1 = 1.2, b = 0.75) summed over distinct query terms.
pub fn sparse_score<T: Scalar>(query_text: &str, doc_text: &str, stats: &CorpusStats) -> T {
    let doc = tokenize(doc_text);
    let tf = term_counts(&doc);
    T::lit(bm25_with_counts(&distinct_terms(query_text), &tf, doc.len(), stats))
}

pub fn try_dense_score<T: Scalar, E: TextEncoder<T> + ?Sized>(
    query_text: &str,
    doc_text: &str,
    encoder: &E,
) -> Result<T, RetrievalError> {
    encoder
        .embed(query_text)
        .cosine(&encoder.embed(doc_text))
        .ok_or(RetrievalError::DegenerateEmbedding)
}

/// Cosine of the two embeddings; 0 when either text is degenerate.
pub fn dense_score<T: Scalar, E: TextEncoder<T> + ?Sized>(
    query_text: &str,
    doc_text: &str,
    encoder: &E,
) -> T {
    try_dense_score(query_text, doc_text, encoder).unwrap_or_else(|_| T::zero())
}

pub(crate) fn clamp_unit<T: Scalar>(x: T) -> T {
    x.max(-T::one()).min(T::one())
}

pub(crate) fn maxsim<T: Scalar>(query: &[Vec<T>], doc: &[Vec<T>]) -> T {
    if query.is_empty() || doc.is_empty() {
        return T::zero();
    }
    let total: T = query
        .iter()
        .map(|q| {
            doc.iter()
                .map(|d| clamp_unit(dot(q, d)))
                .fold(T::neg_infinity(), T::max)
        })
        .sum();
    total / T::lit(query.len() as f64)
}

/// Late interaction: each query token's best cosine against the document
/// tokens, averaged over query tokens. 0 when either side has no tokens.
pub fn multi_vector_score<T: Scalar, E: TextEncoder<T> + ?Sized>(
    query_text: &str,
    doc_text: &str,
    encoder: &E,
) -> T {
    maxsim(&encoder.token_vectors(query_text), &encoder.token_vectors(doc_text))
}
