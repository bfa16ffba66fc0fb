//! Deterministic text world with weighted milestones.
//!
//! Tasks are data: see [`taskfile`] for the file format. The bundled catalog
//! holds four task families (boiling, conductivity, find-and-focus and
//! pouring), each with a dozen variations.

mod action;
mod state;
pub mod taskfile;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

pub use action::Action;
pub use state::{render_observation, ActionResult, Object, Parent, WorldState};
pub use taskfile::{Milestone, Predicate, Property, TaskSpec, TaskTemplate};

use crate::dataset::{StepRecord, SubGoal, Trajectory};
use crate::kb::RelationRegistry;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("task `{task}` has {count} variations, {variation} requested")]
    UnknownVariation {
        task: String,
        variation: u32,
        count: usize,
    },
    #[error("cannot parse action `{0}`")]
    UnparseableAction(String),
    #[error("invalid task `{task}`: {message}")]
    InvalidTask { task: String, message: String },
    #[error("expert script of `{task}` failed at `{action}`: {reason}")]
    ScriptFailure {
        task: String,
        action: String,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const BUILTIN_TASKS: [&str; 4] = [
    include_str!("tasks/boil.toml"),
    include_str!("tasks/conductivity.toml"),
    include_str!("tasks/find.toml"),
    include_str!("tasks/pour.toml"),
];

/// Registry of task templates plus the relation registry facts are typed with.
#[derive(Debug, Clone)]
pub struct Catalog {
    templates: BTreeMap<String, TaskTemplate>,
    registry: Arc<RelationRegistry>,
}

impl Default for Catalog {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Catalog {
    pub fn empty(registry: RelationRegistry) -> Self {
        Self {
            templates: BTreeMap::new(),
            registry: Arc::new(registry),
        }
    }

    pub fn builtin() -> Self {
        let mut c = Self::empty(RelationRegistry::microworld_default());
        for src in BUILTIN_TASKS {
            c.add_source(src).expect("bundled task files are valid");
        }
        c
    }

    /// Adds (or replaces) a task from task-file source text.
    pub fn add_source(&mut self, src: &str) -> Result<&TaskTemplate, WorldError> {
        let t = TaskTemplate::parse(src)?;
        let id = t.id.clone();
        self.templates.insert(id.clone(), t);
        Ok(&self.templates[&id])
    }

    /// Adds every `*.toml` file in `dir`, in file-name order.
    pub fn load_dir(&mut self, dir: impl AsRef<Path>) -> Result<usize, WorldError> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        paths.retain(|p| p.extension().is_some_and(|e| e == "toml"));
        paths.sort();
        for p in &paths {
            self.add_source(&std::fs::read_to_string(p)?)?;
        }
        Ok(paths.len())
    }

    pub fn registry(&self) -> &RelationRegistry {
        &self.registry
    }

    pub fn task_ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn template(&self, task_id: &str) -> Result<&TaskTemplate, WorldError> {
        self.templates
            .get(task_id)
            .ok_or_else(|| WorldError::UnknownTask(task_id.to_string()))
    }

    pub fn variation_count(&self, task_id: &str) -> Result<usize, WorldError> {
        Ok(self.template(task_id)?.variation_count())
    }

    pub fn task(&self, task_id: &str, variation: u32) -> Result<TaskSpec, WorldError> {
        self.template(task_id)?.instantiate(variation)
    }

    pub fn reset(&self, task_id: &str, variation: u32) -> Result<(WorldState, ActionResult), WorldError> {
        let task = Arc::new(self.task(task_id, variation)?);
        Ok(WorldState::initial(task, Arc::clone(&self.registry)))
    }

    /// Runs the task's script, one sub-goal per script segment, each named
    /// after the milestone it completes.
    pub fn expert_trajectory(&self, task_id: &str, variation: u32) -> Result<Trajectory, WorldError> {
        let (mut state, _) = self.reset(task_id, variation)?;
        let task = state.task_arc();
        let fail = |action: &str, reason: String| WorldError::ScriptFailure {
            task: task.instance_id(),
            action: action.to_string(),
            reason,
        };
        let mut subgoals = Vec::with_capacity(task.script.len());
        for (segment, milestone) in task.script.iter().zip(&task.milestones) {
            let mut steps = Vec::with_capacity(segment.actions.len());
            for action in &segment.actions {
                let (next, result) = state.step(action)?;
                if !result.accepted {
                    return Err(fail(action, result.observation));
                }
                let text = Action::parse(action)?.to_string();
                steps.push(StepRecord {
                    action: text,
                    observation: result.observation,
                    milestone_hits: result.milestone_hits,
                });
                state = next;
            }
            subgoals.push(SubGoal::new(milestone.predicate.describe(), steps));
        }
        if !state.is_complete() {
            return Err(fail(
                segment_tail(&task),
                format!("script ends with score {}", state.score()),
            ));
        }
        Ok(Trajectory {
            task_id: task.id.clone(),
            variation,
            goal: task.goal.clone(),
            subgoals,
        })
    }

    /// Every (task, variation) pair in catalog order.
    pub fn instances(&self) -> Vec<(String, u32)> {
        self.templates
            .iter()
            .flat_map(|(id, t)| (0..t.variation_count() as u32).map(move |v| (id.clone(), v)))
            .collect()
    }
}

fn segment_tail(task: &TaskSpec) -> &str {
    task.script
        .last()
        .and_then(|s| s.actions.last())
        .map(String::as_str)
        .unwrap_or("")
}
