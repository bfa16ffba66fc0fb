use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::model::{EmbeddingModel, Projection};
use super::EmbedError;
use crate::scalar::{dot, Scalar};

/// Query, one positive, and `m >= 1` negatives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub query: String,
    pub positive: String,
    pub negatives: Vec<String>,
}

impl TrainingInstance {
    pub fn new(
        query: impl Into<String>,
        positive: impl Into<String>,
        negatives: Vec<String>,
    ) -> Result<Self, EmbedError> {
        let inst = Self {
            query: query.into(),
            positive: positive.into(),
            negatives,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.negatives.is_empty() {
            return Err(EmbedError::InvalidInstance("no negatives".into()));
        }
        if self.negatives.contains(&self.positive) {
            return Err(EmbedError::InvalidInstance(
                "positive also appears among negatives".into(),
            ));
        }
        Ok(())
    }
}

/// Gradient restricted to the rows of touched feature buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrad<T> {
    d_emb: usize,
    rows: BTreeMap<u32, Vec<T>>,
}

impl<T: Scalar> SparseGrad<T> {
    pub fn zeros(d_emb: usize) -> Self {
        Self {
            d_emb,
            rows: BTreeMap::new(),
        }
    }

    pub fn rows(&self) -> &BTreeMap<u32, Vec<T>> {
        &self.rows
    }

    pub fn get(&self, row: u32, col: usize) -> T {
        self.rows.get(&row).map_or(T::zero(), |r| r[col])
    }

    fn accumulate(&mut self, bucket: u32, scale: T, direction: &[T]) {
        let row = self
            .rows
            .entry(bucket)
            .or_insert_with(|| vec![T::zero(); self.d_emb]);
        for (r, &d) in row.iter_mut().zip(direction) {
            *r = *r + scale * d;
        }
    }

    fn scale(&mut self, s: T) {
        for row in self.rows.values_mut() {
            for x in row.iter_mut() {
                *x = *x * s;
            }
        }
    }

    pub fn max_abs(&self) -> T {
        self.rows
            .values()
            .flatten()
            .fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    /// `W -= lr * grad`.
    pub fn apply_descent(&self, model: &mut EmbeddingModel<T>, lr: T) {
        for (&b, g) in &self.rows {
            for (w, &d) in model.row_mut(b).iter_mut().zip(g) {
                *w = *w - lr * d;
            }
        }
    }
}

fn check_batch(batch: &[TrainingInstance], tau: f64) -> Result<(), EmbedError> {
    if batch.is_empty() {
        return Err(EmbedError::EmptyBatch);
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(EmbedError::InvalidTemperature(tau));
    }
    batch.iter().try_for_each(TrainingInstance::validate)
}

/// `-log softmax(z)[0]` for logits `z = [s_p, s_n...] / tau`, shifted by the max.
fn instance_forward<T: Scalar>(
    model: &EmbeddingModel<T>,
    inst: &TrainingInstance,
    tau: T,
) -> (T, Projection<T>, Vec<Projection<T>>, Vec<T>) {
    let q = model.project(&inst.query);
    let keys: Vec<Projection<T>> = std::iter::once(&inst.positive)
        .chain(&inst.negatives)
        .map(|k| model.project(k))
        .collect();
    let logits: Vec<T> = keys.iter().map(|k| dot(&q.unit, &k.unit) / tau).collect();
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = logits.iter().map(|&z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    let probs = logits.iter().map(|&z| (z - max).exp() / sum).collect();
    (lse - logits[0], q, keys, probs)
}

/// Pushes `upstream = dL/d(unit)` back through normalization and projection.
fn backprop_text<T: Scalar>(grad: &mut SparseGrad<T>, p: &Projection<T>, upstream: &[T]) {
    if p.hidden_norm == T::zero() {
        return;
    }
    let along = dot(&p.unit, upstream);
    let dh: Vec<T> = upstream
        .iter()
        .zip(&p.unit)
        .map(|(&g, &e)| (g - e * along) / p.hidden_norm)
        .collect();
    for &(b, x) in &p.features {
        grad.accumulate(b, x, &dh);
    }
}

pub fn info_nce_loss<T: Scalar>(
    model: &EmbeddingModel<T>,
    batch: &[TrainingInstance],
    tau: f64,
) -> Result<T, EmbedError> {
    check_batch(batch, tau)?;
    let t = T::lit(tau);
    let total: T = batch.iter().map(|inst| instance_forward(model, inst, t).0).sum();
    let loss = total / T::lit(batch.len() as f64);
    if !loss.is_finite() {
        return Err(EmbedError::NonFiniteLoss);
    }
    Ok(loss.max(T::zero()))
}

pub fn info_nce_grad<T: Scalar>(
    model: &EmbeddingModel<T>,
    batch: &[TrainingInstance],
    tau: f64,
) -> Result<SparseGrad<T>, EmbedError> {
    info_nce_loss_and_grad(model, batch, tau).map(|(_, g)| g)
}

/// Mean InfoNCE loss and its analytic gradient with respect to `W`.
pub fn info_nce_loss_and_grad<T: Scalar>(
    model: &EmbeddingModel<T>,
    batch: &[TrainingInstance],
    tau: f64,
) -> Result<(T, SparseGrad<T>), EmbedError> {
    check_batch(batch, tau)?;
    let t = T::lit(tau);
    let mut grad = SparseGrad::zeros(model.d_emb());
    let mut total = T::zero();
    for inst in batch {
        let (loss, q, keys, probs) = instance_forward(model, inst, t);
        total = total + loss;
        // dL/dz_k = p_k - [k == 0]; z_k = q·k / tau.
        let dz: Vec<T> = probs
            .iter()
            .enumerate()
            .map(|(k, &p)| if k == 0 { p - T::one() } else { p })
            .collect();
        let mut dq = vec![T::zero(); model.d_emb()];
        for (k, key) in keys.iter().enumerate() {
            let coef = dz[k] / t;
            for (g, &e) in dq.iter_mut().zip(&key.unit) {
                *g = *g + coef * e;
            }
            let dk: Vec<T> = q.unit.iter().map(|&e| coef * e).collect();
            backprop_text(&mut grad, key, &dk);
        }
        backprop_text(&mut grad, &q, &dq);
    }
    let n = T::lit(batch.len() as f64);
    grad.scale(T::one() / n);
    let loss = total / n;
    if !loss.is_finite() || !grad.max_abs().is_finite() {
        return Err(EmbedError::NonFiniteLoss);
    }
    Ok((loss.max(T::zero()), grad))
}
