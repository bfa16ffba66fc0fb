use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DecisionError, MemoryEvent};
use crate::dataset::Trajectory;
use crate::kb::{EntityId, SubGoalUnit};
use crate::microworld::{Action, ActionResult};
use crate::retrieval::Document;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<String>,
    pub current_index: usize,
}

impl Plan {
    pub fn new(steps: Vec<String>) -> Self {
        Self {
            steps,
            current_index: 0,
        }
    }

    /// Text of the current step, or empty once the plan is used up.
    pub fn current(&self) -> &str {
        self.steps.get(self.current_index).map_or("", String::as_str)
    }

    pub fn advance(&mut self) {
        self.current_index = (self.current_index + 1).min(self.steps.len());
    }

    pub fn is_finished(&self) -> bool {
        self.current_index >= self.steps.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    OnTrack,
    StepDone,
    Deviated,
    TaskDone,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalVerdict {
    pub status: VerdictStatus,
    pub rationale: String,
}

impl EvalVerdict {
    pub fn new(status: VerdictStatus, rationale: impl Into<String>) -> Self {
        Self {
            status,
            rationale: rationale.into(),
        }
    }
}

/// Everything a decision model may look at for one call.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub goal: &'a str,
    pub plan: Option<&'a Plan>,
    pub memory: &'a [MemoryEvent],
    pub env_docs: &'a [Document],
    pub exp_units: &'a [SubGoalUnit],
    /// Observation-only actions available right now.
    pub filler: &'a [String],
    pub steps_used: usize,
}

/// Planner, actuator and evaluator.
pub trait DecisionModel {
    fn propose_plan(&mut self, ctx: &DecisionContext) -> Result<Plan, DecisionError>;
    fn propose_action(&mut self, ctx: &DecisionContext) -> Result<String, DecisionError>;
    fn evaluate(&mut self, ctx: &DecisionContext, last: &ActionResult) -> Result<EvalVerdict, DecisionError>;
}

/// Flattened expert script with a cursor.
#[derive(Debug, Clone, PartialEq)]
struct Script {
    task_id: String,
    names: Vec<String>,
    actions: Vec<String>,
    /// Segment index of each action.
    segment: Vec<usize>,
    cursor: usize,
}

impl Script {
    fn new(t: &Trajectory) -> Self {
        let mut actions = Vec::new();
        let mut segment = Vec::new();
        for (i, sg) in t.subgoals.iter().enumerate() {
            for s in &sg.actions {
                actions.push(s.action.clone());
                segment.push(i);
            }
        }
        Self {
            task_id: t.task_id.clone(),
            names: t.subgoals.iter().map(|s| s.name.clone()).collect(),
            actions,
            segment,
            cursor: 0,
        }
    }

    fn plan(&self) -> Plan {
        Plan {
            steps: self.names.clone(),
            current_index: self.segment.get(self.cursor).copied().unwrap_or(self.names.len()),
        }
    }

    fn next(&self) -> Option<&str> {
        self.actions.get(self.cursor).map(String::as_str)
    }

    /// True when the most recently consumed action closed a segment.
    fn just_closed_segment(&self) -> bool {
        self.cursor > 0
            && (self.cursor == self.actions.len() || self.segment[self.cursor] != self.segment[self.cursor - 1])
    }

    fn verdict(&self, last: &ActionResult) -> EvalVerdict {
        if last.terminal {
            EvalVerdict::new(VerdictStatus::TaskDone, "the world reports the task complete")
        } else if self.just_closed_segment() {
            EvalVerdict::new(VerdictStatus::StepDone, "the scripted segment is finished")
        } else {
            EvalVerdict::new(VerdictStatus::OnTrack, "following the script")
        }
    }
}

/// Replays a fixed trajectory, then looks around once the script runs out.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedOracle {
    script: Script,
}

impl ScriptedOracle {
    pub fn new(trajectory: &Trajectory) -> Self {
        Self {
            script: Script::new(trajectory),
        }
    }

    pub fn len(&self) -> usize {
        self.script.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.script.actions.is_empty()
    }
}

impl DecisionModel for ScriptedOracle {
    fn propose_plan(&mut self, _ctx: &DecisionContext) -> Result<Plan, DecisionError> {
        Ok(self.script.plan())
    }

    fn propose_action(&mut self, _ctx: &DecisionContext) -> Result<String, DecisionError> {
        match self.script.next().map(str::to_string) {
            Some(a) => {
                self.script.cursor += 1;
                Ok(a)
            }
            None => Ok("look around".into()),
        }
    }

    fn evaluate(&mut self, _ctx: &DecisionContext, last: &ActionResult) -> Result<EvalVerdict, DecisionError> {
        Ok(self.script.verdict(last))
    }
}

/// Follows a script but, with probability `p` per step, loses track of it.
/// A confused step still lands on the scripted action when retrieval offers
/// enough support: an environmental fact about one of the action's arguments,
/// and an experiential unit from the same task family that uses the same verb.
/// Otherwise it spends the step on a random observation-only action and tries
/// the scripted action again next time.
#[derive(Debug, Clone)]
pub struct NoisyScripted {
    script: Script,
    p: f64,
    rng: ChaCha8Rng,
    last_was_noise: bool,
    recoveries: usize,
    slips: usize,
}

impl NoisyScripted {
    pub fn new(trajectory: &Trajectory, p: f64, seed: u64) -> Self {
        Self {
            script: Script::new(trajectory),
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last_was_noise: false,
            recoveries: 0,
            slips: 0,
        }
    }

    /// (recovered confusions, wasted steps) so far.
    pub fn counts(&self) -> (usize, usize) {
        (self.recoveries, self.slips)
    }

    fn supported(&self, intended: &str, ctx: &DecisionContext) -> bool {
        let Ok(action) = Action::parse(intended) else {
            return false;
        };
        let args: Vec<EntityId> = action
            .arguments()
            .into_iter()
            .filter_map(|a| EntityId::new(a).ok())
            .collect();
        let env_ok = args.is_empty() && !ctx.env_docs.is_empty()
            || ctx
                .env_docs
                .iter()
                .filter_map(Document::triple)
                .any(|t| args.iter().any(|a| t.mentions(a)));
        let family = format!("{}:", self.script.task_id);
        let exp_ok = ctx.exp_units.iter().any(|u| {
            u.source_task_id.starts_with(&family)
                && u.action_trajectory
                    .iter()
                    .any(|a| Action::parse(a).is_ok_and(|a| a.verb() == action.verb()))
        });
        env_ok && exp_ok
    }
}

impl DecisionModel for NoisyScripted {
    fn propose_plan(&mut self, _ctx: &DecisionContext) -> Result<Plan, DecisionError> {
        Ok(self.script.plan())
    }

    fn propose_action(&mut self, ctx: &DecisionContext) -> Result<String, DecisionError> {
        // Two draws every step keep the random stream aligned across conditions.
        let confused = self.rng.random::<f64>() < self.p;
        let pick = self.rng.random::<f64>();
        let Some(intended) = self.script.next().map(str::to_string) else {
            self.last_was_noise = false;
            return Ok("look around".into());
        };
        if confused && !self.supported(&intended, ctx) && !ctx.filler.is_empty() {
            self.last_was_noise = true;
            self.slips += 1;
            let i = ((pick * ctx.filler.len() as f64) as usize).min(ctx.filler.len() - 1);
            return Ok(ctx.filler[i].clone());
        }
        if confused {
            self.recoveries += 1;
        }
        self.last_was_noise = false;
        self.script.cursor += 1;
        Ok(intended)
    }

    fn evaluate(&mut self, _ctx: &DecisionContext, last: &ActionResult) -> Result<EvalVerdict, DecisionError> {
        if self.last_was_noise && !last.terminal {
            return Ok(EvalVerdict::new(VerdictStatus::Deviated, "the last action did not follow the plan"));
        }
        Ok(self.script.verdict(last))
    }
}
