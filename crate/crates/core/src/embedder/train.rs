use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{info_nce_loss_and_grad, TrainingInstance};
use super::model::EmbeddingModel;
use super::EmbedError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub tau: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Negatives per instance requested from the dataset builders.
    pub m: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.05,
            learning_rate: 0.05,
            epochs: 10,
            batch_size: 16,
            m: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if !(self.tau > 0.0) {
            return Err(EmbedError::InvalidTemperature(self.tau));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.m == 0 {
            return Err(EmbedError::InvalidConfig(
                "learning_rate, batch_size and m must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss over each epoch's mini-batches, measured before each update.
    pub epoch_losses: Vec<f64>,
}

/// Plain mini-batch gradient descent with a seeded shuffle per epoch.
pub fn train<T: Scalar>(
    model: &EmbeddingModel<T>,
    dataset: &[TrainingInstance],
    cfg: &TrainConfig,
) -> Result<(EmbeddingModel<T>, TrainReport), EmbedError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(EmbedError::EmptyDataset);
    }
    let mut model = model.clone();
    let mut report = TrainReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let lr = T::lit(cfg.learning_rate);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainingInstance> = chunk.iter().map(|&i| dataset[i].clone()).collect();
            let (loss, grad) = info_nce_loss_and_grad(&model, &batch, cfg.tau)?;
            weighted += loss.as_f64() * batch.len() as f64;
            grad.apply_descent(&mut model, lr);
        }
        let mean = weighted / dataset.len() as f64;
        log::info!("epoch {epoch}: mean loss {mean:.6}");
        report.epoch_losses.push(mean);
    }
    if !model.is_finite() {
        return Err(EmbedError::NonFiniteLoss);
    }
    if let (Some(&first), Some(&last)) = (report.epoch_losses.first(), report.epoch_losses.last()) {
        if last > first {
            return Err(EmbedError::TrainingDiverged { first, last });
        }
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vec<TrainingInstance> {
        let objects = ["pot", "kettle", "frog", "lamp", "fork", "cup", "battery", "seed"];
        objects
            .iter()
            .map(|o| {
                let negs = objects
                    .iter()
                    .filter(|x| *x != o)
                    .take(4)
                    .map(|x| format!("{x} | located_in | shelf"))
                    .collect();
                TrainingInstance::new(
                    format!("go find the {o}"),
                    format!("{o} | located_in | shelf"),
                    negs,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let m = EmbeddingModel::<f64>::with_dims(1024, 16, 4);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (out, report) = train(&m, &toy(), &cfg).unwrap();
        assert_eq!(out, m);
        assert!(report.epoch_losses.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let m = EmbeddingModel::<f64>::with_dims(1024, 16, 4);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 3,
            seed: 9,
            ..TrainConfig::default()
        };
        let (a, ra) = train(&m, &toy(), &cfg).unwrap();
        let (b, rb) = train(&m, &toy(), &cfg).unwrap();
        assert_eq!(a.weights(), b.weights());
        assert_eq!(ra, rb);
        assert!(ra.epoch_losses.last() < ra.epoch_losses.first());
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let m = EmbeddingModel::<f32>::with_dims(64, 4, 0);
        assert!(matches!(
            train(&m, &[], &TrainConfig::default()),
            Err(EmbedError::EmptyDataset)
        ));
    }
}
