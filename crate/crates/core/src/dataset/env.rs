use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{env_query, DatasetError, SubGoal, Trajectory};
use crate::embedder::TrainingInstance;
use crate::kb::{EntityId, EnvKnowledgeBase, Triple};
use crate::microworld::{Action, Catalog};

/// Env-store contents captured right before each sub-goal's first action.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSnapshot {
    pub per_subgoal: Vec<Vec<Triple>>,
    /// Store contents after the last action.
    pub final_state: Vec<Triple>,
    pub final_score: f64,
}

/// Replays `trajectory` from a fresh reset, ingesting every emitted fact.
pub fn collect_env_knowledge(catalog: &Catalog, trajectory: &Trajectory) -> Result<EnvSnapshot, DatasetError> {
    trajectory.validate().map_err(DatasetError::InvalidTrajectory)?;
    let (mut state, initial) = catalog.reset(&trajectory.task_id, trajectory.variation)?;
    let mut kb = EnvKnowledgeBase::new(catalog.registry().clone());
    kb.ingest_facts(&initial.facts, 0)?;
    let mut per_subgoal = Vec::with_capacity(trajectory.subgoals.len());
    for (i, sg) in trajectory.subgoals.iter().enumerate() {
        per_subgoal.push(kb.to_vec());
        for step in &sg.actions {
            let diverged = |reason: String| DatasetError::ReplayDivergence {
                task: trajectory.instance_id(),
                subgoal: i,
                action: step.action.clone(),
                reason,
            };
            let (next, result) = state.step(&step.action).map_err(|e| diverged(e.to_string()))?;
            if !result.accepted {
                return Err(diverged(result.observation));
            }
            kb.ingest_facts(&result.facts, next.step_count())?;
            state = next;
        }
    }
    Ok(EnvSnapshot {
        per_subgoal,
        final_state: kb.to_vec(),
        final_score: state.score(),
    })
}

/// Names used as arguments by the sub-goal's actions. Text outside the
/// action grammar contributes nothing.
pub fn interacted_objects(sg: &SubGoal) -> BTreeSet<EntityId> {
    sg.actions
        .iter()
        .filter_map(|s| Action::parse(&s.action).ok())
        .flat_map(|a| {
            a.arguments()
                .into_iter()
                .filter_map(|n| EntityId::new(n).ok())
                .collect::<Vec<_>>()
        })
        .collect()
}

/// A triple relates to an object when the object fills its subject or entity value.
pub fn is_related(t: &Triple, objects: &BTreeSet<EntityId>) -> bool {
    objects.contains(&t.subject) || t.value.entity().is_some_and(|e| objects.contains(e))
}

/// Splits a snapshot into (related, unrelated), each in snapshot order.
pub fn partition<'a>(snapshot: &'a [Triple], objects: &BTreeSet<EntityId>) -> (Vec<&'a Triple>, Vec<&'a Triple>) {
    snapshot.iter().partition(|t| is_related(t, objects))
}

/// One instance per positive, `min(|P|, |N|)` per sub-goal; each gets
/// `min(m, |N|)` negatives drawn without replacement.
pub fn build_env_dataset(
    snapshot: &EnvSnapshot,
    trajectory: &Trajectory,
    m: usize,
    seed: u64,
) -> Result<Vec<TrainingInstance>, DatasetError> {
    if m == 0 {
        return Err(DatasetError::InvalidConfig("m must be at least 1".into()));
    }
    if snapshot.per_subgoal.len() != trajectory.subgoals.len() {
        return Err(DatasetError::InvalidConfig(format!(
            "snapshot has {} entries for {} sub-goals",
            snapshot.per_subgoal.len(),
            trajectory.subgoals.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (sg, triples) in trajectory.subgoals.iter().zip(&snapshot.per_subgoal) {
        let objects = interacted_objects(sg);
        let (pos, neg) = partition(triples, &objects);
        let n = pos.len().min(neg.len());
        if n == 0 {
            log::debug!(
                "{}: sub-goal `{}` has {} related and {} unrelated triples, no instances",
                trajectory.instance_id(),
                sg.name,
                pos.len(),
                neg.len()
            );
            continue;
        }
        let query = env_query(&trajectory.goal, &sg.name);
        for p in pos.iter().take(n) {
            let negatives = rand::seq::index::sample(&mut rng, neg.len(), m.min(neg.len()))
                .into_iter()
                .map(|i| neg[i].render())
                .collect();
            out.push(TrainingInstance::new(query.clone(), p.render(), negatives)?);
        }
    }
    Ok(out)
}
