use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::features::{tokenize, FeatureVector, D_FEAT};
use super::EmbedError;
use crate::scalar::{dot, Scalar};

pub const D_EMB: usize = 64;
pub const MODEL_SCHEMA: &str = "dualkb.model";
const MODEL_VERSION: u32 = 1;

/// Unit-norm embedding, or all zeros when the text has no usable features.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T> {
    pub vector: Vec<T>,
    pub degenerate: bool,
}

impl<T: Scalar> Embedding<T> {
    /// Dot product of unit vectors clamped to [-1, 1]; `None` if either side is degenerate.
    pub fn cosine(&self, other: &Self) -> Option<T> {
        if self.degenerate || other.degenerate {
            return None;
        }
        Some(dot(&self.vector, &other.vector).max(-T::one()).min(T::one()))
    }
}

/// Text → vector seam used by the retrieval scorers.
pub trait TextEncoder<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Embedding<T>;
    /// One unit vector per token, in token order; degenerate tokens are skipped.
    fn token_vectors(&self, text: &str) -> Vec<Vec<T>>;
}

/// Linear projection `W` (d_feat × d_emb, row-major) applied to l2-normalized
/// hashed token counts, followed by l2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel<T> {
    d_feat: usize,
    d_emb: usize,
    seed: u64,
    w: Vec<T>,
}

pub(crate) struct Projection<T> {
    pub features: Vec<(u32, T)>,
    pub hidden_norm: T,
    pub unit: Vec<T>,
}

impl<T: Scalar> EmbeddingModel<T> {
    /// Default-sized model with seeded Gaussian weights scaled by `1/sqrt(d_feat)`.
    pub fn new(seed: u64) -> Self {
        Self::with_dims(D_FEAT, D_EMB, seed)
    }

    pub fn with_dims(d_feat: usize, d_emb: usize, seed: u64) -> Self {
        assert!(d_feat > 0 && d_emb > 0, "model dimensions must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (d_feat as f64).sqrt();
        let w = (0..d_feat * d_emb)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::lit(z * scale)
            })
            .collect();
        Self {
            d_feat,
            d_emb,
            seed,
            w,
        }
    }

    pub fn d_feat(&self) -> usize {
        self.d_feat
    }

    pub fn d_emb(&self) -> usize {
        self.d_emb
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &[T] {
        &self.w
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.w
    }

    pub fn row(&self, bucket: u32) -> &[T] {
        let start = bucket as usize * self.d_emb;
        &self.w[start..start + self.d_emb]
    }

    pub fn row_mut(&mut self, bucket: u32) -> &mut [T] {
        let start = bucket as usize * self.d_emb;
        &mut self.w[start..start + self.d_emb]
    }

    pub fn featurize(&self, text: &str) -> FeatureVector {
        FeatureVector::from_text(text, self.d_feat)
    }

    pub(crate) fn project(&self, text: &str) -> Projection<T> {
        let features = self.featurize(text).normalized::<T>();
        let mut hidden = vec![T::zero(); self.d_emb];
        for &(b, x) in &features {
            for (h, &w) in hidden.iter_mut().zip(self.row(b)) {
                *h = *h + x * w;
            }
        }
        let hidden_norm = dot(&hidden, &hidden).sqrt();
        let unit = if hidden_norm > T::zero() {
            hidden.iter().map(|&h| h / hidden_norm).collect()
        } else {
            vec![T::zero(); self.d_emb]
        };
        Projection {
            features,
            hidden_norm,
            unit,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|x| x.is_finite())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbedError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        Self::read_from(std::fs::File::open(path)?)
    }

    /// Header JSON line, then `d_feat * d_emb` little-endian scalars, row-major.
    pub fn write_to(&self, out: &mut impl Write) -> Result<(), EmbedError> {
        let header = ModelHeader {
            schema: MODEL_SCHEMA.into(),
            version: MODEL_VERSION,
            scalar: T::NAME.into(),
            d_feat: self.d_feat,
            d_emb: self.d_emb,
            seed: self.seed,
        };
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        let mut buf = Vec::with_capacity(self.w.len() * T::WIDTH);
        for &x in &self.w {
            x.write_le(&mut buf);
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(input: impl Read) -> Result<Self, EmbedError> {
        let mut reader = BufReader::new(input);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let header: ModelHeader = serde_json::from_str(line.trim_end())
            .map_err(|e| EmbedError::ModelFormat(format!("bad header: {e}")))?;
        if header.schema != MODEL_SCHEMA || header.version != MODEL_VERSION {
            return Err(EmbedError::ModelFormat(format!(
                "unsupported schema {} v{}",
                header.schema, header.version
            )));
        }
        if header.scalar != T::NAME {
            return Err(EmbedError::ModelFormat(format!(
                "file holds {} weights, requested {}",
                header.scalar,
                T::NAME
            )));
        }
        if header.d_feat == 0 || header.d_emb == 0 {
            return Err(EmbedError::ModelFormat("zero dimension".into()));
        }
        let n = header.d_feat * header.d_emb;
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        if bytes.len() != n * T::WIDTH {
            return Err(EmbedError::ModelFormat(format!(
                "expected {} weight bytes, found {}",
                n * T::WIDTH,
                bytes.len()
            )));
        }
        let w: Vec<T> = bytes.chunks_exact(T::WIDTH).map(T::read_le).collect();
        if w.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::ModelFormat("non-finite weight".into()));
        }
        Ok(Self {
            d_feat: header.d_feat,
            d_emb: header.d_emb,
            seed: header.seed,
            w,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    schema: String,
    version: u32,
    scalar: String,
    d_feat: usize,
    d_emb: usize,
    seed: u64,
}

impl<T: Scalar> TextEncoder<T> for EmbeddingModel<T> {
    fn dim(&self) -> usize {
        self.d_emb
    }

    fn embed(&self, text: &str) -> Embedding<T> {
        let p = self.project(text);
        Embedding {
            degenerate: p.hidden_norm == T::zero(),
            vector: p.unit,
        }
    }

    fn token_vectors(&self, text: &str) -> Vec<Vec<T>> {
        tokenize(text)
            .iter()
            .filter_map(|tok| {
                let row = self.row(super::features::bucket(tok, self.d_feat));
                let norm = dot(row, row).sqrt();
                (norm > T::zero()).then(|| row.iter().map(|&x| x / norm).collect())
            })
            .collect()
    }
}
