use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{exp_query, DatasetError, SubGoal, Trajectory};
use crate::embedder::{TextEncoder, TrainingInstance};
use crate::kb::SubGoalUnit;
use crate::scalar::Scalar;

/// Unordered similar pairs, stored in both orientations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    pub theta: f64,
    pub pairs: BTreeSet<(usize, usize)>,
}

impl PairSet {
    pub fn partners(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.pairs.range((i, 0)..=(i, usize::MAX)).map(|&(_, j)| j)
    }

    pub fn is_symmetric(&self) -> bool {
        self.pairs
            .iter()
            .all(|&(i, j)| i != j && self.pairs.contains(&(j, i)))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpDatasetConfig {
    pub theta: f64,
    pub m: usize,
    pub seed: u64,
    /// Include the sub-goal's environmental knowledge in the query.
    pub joint_knowledge: bool,
}

impl Default for ExpDatasetConfig {
    fn default() -> Self {
        Self {
            theta: 0.8,
            m: 8,
            seed: 0,
            joint_knowledge: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpDataset {
    pub pairs: PairSet,
    pub instances: Vec<TrainingInstance>,
    /// Pair members dropped for lack of `m` unpaired negatives.
    pub skipped: usize,
}

/// Cosine of the embedded action sequences; 0 when either side is degenerate.
pub fn subgoal_similarity<T: Scalar, E: TextEncoder<T> + ?Sized>(a: &SubGoal, b: &SubGoal, encoder: &E) -> T {
    encoder
        .embed(&a.render_actions())
        .cosine(&encoder.embed(&b.render_actions()))
        .unwrap_or_else(T::zero)
}

/// All sub-goals of all trajectories, in order.
pub fn flatten(trajectories: &[Trajectory]) -> Vec<&SubGoal> {
    trajectories.iter().flat_map(|t| t.subgoals.iter()).collect()
}

/// Every ordered pair `(i, j)`, `i != j`, with similarity strictly above `theta`.
pub fn similar_pairs<T: Scalar, E: TextEncoder<T> + ?Sized>(subgoals: &[&SubGoal], encoder: &E, theta: f64) -> PairSet {
    let embs: Vec<_> = subgoals
        .iter()
        .map(|sg| encoder.embed(&sg.render_actions()))
        .collect();
    let mut pairs = BTreeSet::new();
    for i in 0..embs.len() {
        for j in i + 1..embs.len() {
            let sim = embs[i].cosine(&embs[j]).unwrap_or_else(T::zero).as_f64();
            if sim > theta {
                pairs.insert((i, j));
                pairs.insert((j, i));
            }
        }
    }
    PairSet { theta, pairs }
}

/// For every pair member `i` with partner `j`: the query renders `i`, the
/// positive is `j`'s unit and the negatives are units of sub-goals that are
/// neither `i` nor paired with it.
pub fn build_exp_dataset<T: Scalar, E: TextEncoder<T> + ?Sized>(
    trajectories: &[Trajectory],
    encoder: &E,
    cfg: &ExpDatasetConfig,
) -> Result<ExpDataset, DatasetError> {
    if !(cfg.theta > 0.0 && cfg.theta <= 1.0) {
        return Err(DatasetError::InvalidConfig(format!("theta must be in (0, 1], got {}", cfg.theta)));
    }
    if cfg.m == 0 {
        return Err(DatasetError::InvalidConfig("m must be at least 1".into()));
    }
    let subgoals = flatten(trajectories);
    let units: Vec<&SubGoalUnit> = subgoals
        .iter()
        .enumerate()
        .map(|(i, sg)| sg.exp_unit.as_ref().ok_or(DatasetError::MissingExpUnit(i)))
        .collect::<Result<_, _>>()?;
    let rendered: Vec<String> = units.iter().map(|u| u.render()).collect();
    let pairs = similar_pairs(&subgoals, encoder, cfg.theta);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut instances = Vec::new();
    let mut skipped = 0;
    for &(i, j) in &pairs.pairs {
        let excluded: BTreeSet<usize> = pairs.partners(i).chain([i]).collect();
        let pool: Vec<usize> = (0..subgoals.len())
            .filter(|k| !excluded.contains(k) && rendered[*k] != rendered[j])
            .collect();
        if pool.len() < cfg.m {
            log::debug!("pair ({i}, {j}): only {} unpaired negatives for m = {}", pool.len(), cfg.m);
            skipped += 1;
            continue;
        }
        let negatives = rand::seq::index::sample(&mut rng, pool.len(), cfg.m)
            .into_iter()
            .map(|k| rendered[pool[k]].clone())
            .collect();
        let knowledge = if cfg.joint_knowledge {
            units[i].relevant_env_knowledge.as_slice()
        } else {
            &[]
        };
        let query = exp_query(knowledge, &subgoals[i].render_actions());
        instances.push(TrainingInstance::new(query, rendered[j].clone(), negatives)?);
    }
    if skipped > 0 {
        log::info!("skipped {skipped} pair members with fewer than {} unpaired negatives", cfg.m);
    }
    Ok(ExpDataset {
        pairs,
        instances,
        skipped,
    })
}
