//! Turns trajectories into sub-goal segments and experiential units.
//!
//! The rule-based backend is deterministic. The model-backed backend sends the
//! prompts in `prompts/` to a chat backend and parses the replies with the
//! grammars in [`grammar`]; it never falls back to rules on its own.

pub mod grammar;

use std::collections::BTreeSet;
use std::sync::Arc;

use thiserror::Error;

use crate::chat::{ChatBackend, ChatError, ChatMessage};
use crate::dataset::{interacted_objects, is_related, EnvSnapshot, StepRecord, SubGoal, Trajectory};
use crate::kb::{EntityId, KbError, Provenance, SubGoalUnit, Triple};
use crate::microworld::Action;

pub const EXTRACT_PROMPT: &str = include_str!("prompts/extract.txt");
pub const DECOMPOSE_PROMPT: &str = include_str!("prompts/decompose.txt");

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("nothing to decompose")]
    EmptyTrajectory,
    #[error("decision model failed: {0}")]
    Backend(#[from] ChatError),
    #[error("malformed model response ({message}): {response}")]
    MalformedModelResponse { message: String, response: String },
    #[error(transparent)]
    InvalidUnit(#[from] KbError),
}

#[derive(Clone, Default)]
pub enum DistillerBackend {
    #[default]
    RuleBased,
    ModelBacked(Arc<dyn ChatBackend>),
}

impl std::fmt::Debug for DistillerBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::RuleBased => f.write_str("RuleBased"),
            Self::ModelBacked(_) => f.write_str("ModelBacked"),
        }
    }
}

/// Where a unit came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitOrigin {
    pub source_task_id: String,
    pub provenance: Provenance,
}

fn prompt(template: &str) -> String {
    template
        .lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}

fn numbered_steps(steps: &[StepRecord]) -> String {
    steps
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {} => {}", i + 1, s.action, s.observation))
        .collect::<Vec<_>>()
        .join("\n")
}

fn is_go(action: &str) -> bool {
    matches!(Action::parse(action), Ok(Action::Go(_)))
}

/// Rule-based segmentation: a segment closes after any action that reached a
/// milestone, and a `go` action starts a new segment unless it already opens one.
pub fn segment_by_rules(raw: &[StepRecord]) -> Vec<SubGoal> {
    let mut out = Vec::new();
    let mut cur: Vec<StepRecord> = Vec::new();
    let close = |cur: &mut Vec<StepRecord>, out: &mut Vec<SubGoal>| {
        if let Some(last) = cur.last() {
            let name = last.action.clone();
            out.push(SubGoal::new(name, std::mem::take(cur)));
        }
    };
    for step in raw {
        if is_go(&step.action) {
            close(&mut cur, &mut out);
        }
        let done = !step.milestone_hits.is_empty();
        cur.push(step.clone());
        if done {
            close(&mut cur, &mut out);
        }
    }
    close(&mut cur, &mut out);
    out
}

pub fn decompose(raw: &[StepRecord], backend: &DistillerBackend) -> Result<Vec<SubGoal>, DistillError> {
    if raw.is_empty() {
        return Err(DistillError::EmptyTrajectory);
    }
    match backend {
        DistillerBackend::RuleBased => Ok(segment_by_rules(raw)),
        DistillerBackend::ModelBacked(chat) => {
            let text = prompt(DECOMPOSE_PROMPT).replace("{steps}", &numbered_steps(raw));
            let response = chat.complete(&[ChatMessage::user(text)])?;
            let segments = grammar::parse_segments(&response, raw.len()).map_err(|message| {
                DistillError::MalformedModelResponse {
                    message,
                    response: response.clone(),
                }
            })?;
            Ok(segments
                .into_iter()
                .map(|(a, b, name)| SubGoal::new(name, raw[a..b].to_vec()))
                .collect())
        }
    }
}

/// Templated reflections: one per milestone-reaching action, naming the most
/// recent known fact about one of its arguments; otherwise a single summary.
fn rule_reflections(sg: &SubGoal, relevant: &[Triple]) -> Vec<String> {
    let mut out = Vec::new();
    for step in sg.actions.iter().filter(|s| !s.milestone_hits.is_empty()) {
        let args: BTreeSet<EntityId> = Action::parse(&step.action)
            .map(|a| a.arguments().into_iter().filter_map(|n| EntityId::new(n).ok()).collect())
            .unwrap_or_default();
        let decisive = relevant
            .iter()
            .filter(|t| is_related(t, &args))
            .max_by_key(|t| t.step_index);
        out.push(match decisive {
            Some(t) => format!("Knowing that {} made `{}` complete this sub-goal.", t.render(), step.action),
            None => format!("`{}` completed this sub-goal.", step.action),
        });
    }
    if out.is_empty() {
        let last = sg.actions.last().map_or("", |s| s.action.as_str());
        out.push(format!(
            "This sub-goal took {} action(s) and ended with `{last}`.",
            sg.actions.len()
        ));
    }
    out
}

pub fn extract_unit(
    sg: &SubGoal,
    env_context: &[Triple],
    origin: &UnitOrigin,
    backend: &DistillerBackend,
) -> Result<SubGoalUnit, DistillError> {
    let objects = interacted_objects(sg);
    let relevant: Vec<Triple> = env_context
        .iter()
        .filter(|t| is_related(t, &objects))
        .cloned()
        .collect();
    let unit = match backend {
        DistillerBackend::RuleBased => SubGoalUnit {
            name: sg.name.clone(),
            reflections: rule_reflections(sg, &relevant),
            relevant_env_knowledge: relevant,
            associated_entities: objects.into_iter().collect(),
            action_trajectory: sg.action_texts().into_iter().map(str::to_string).collect(),
            provenance: origin.provenance,
            source_task_id: origin.source_task_id.clone(),
        },
        DistillerBackend::ModelBacked(chat) => {
            let context = env_context.iter().map(Triple::render).collect::<Vec<_>>().join("\n");
            let text = prompt(EXTRACT_PROMPT)
                .replace("{name}", &sg.name)
                .replace("{steps}", &numbered_steps(&sg.actions))
                .replace("{context}", &context);
            let response = chat.complete(&[ChatMessage::user(text)])?;
            let malformed = |message: String| DistillError::MalformedModelResponse {
                message,
                response: response.clone(),
            };
            let reply = grammar::parse_extraction(&response).map_err(malformed)?;
            let entities = reply
                .entities
                .iter()
                .map(|e| EntityId::new(e).map_err(|err| malformed(err.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            let knowledge = reply
                .knowledge
                .iter()
                .map(|line| {
                    env_context
                        .iter()
                        .find(|t| t.render() == *line)
                        .cloned()
                        .ok_or_else(|| malformed(format!("unknown fact `{line}`")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let unit = SubGoalUnit {
                name: sg.name.clone(),
                relevant_env_knowledge: knowledge,
                associated_entities: entities,
                reflections: reply.reflections,
                action_trajectory: sg.action_texts().into_iter().map(str::to_string).collect(),
                provenance: origin.provenance,
                source_task_id: origin.source_task_id.clone(),
            };
            unit.validate().map_err(|e| malformed(e.to_string()))?;
            unit
        }
    };
    unit.validate()?;
    Ok(unit)
}

/// Fills `exp_unit` of every sub-goal, using the matching snapshot as context.
pub fn distill_trajectory(
    trajectory: &mut Trajectory,
    snapshot: &EnvSnapshot,
    provenance: Provenance,
    backend: &DistillerBackend,
) -> Result<(), DistillError> {
    let origin = UnitOrigin {
        source_task_id: trajectory.instance_id(),
        provenance,
    };
    for (sg, context) in trajectory.subgoals.iter_mut().zip(&snapshot.per_subgoal) {
        sg.exp_unit = Some(extract_unit(sg, context, &origin, backend)?);
    }
    Ok(())
}
