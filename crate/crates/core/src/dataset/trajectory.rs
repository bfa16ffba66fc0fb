use serde::{Deserialize, Serialize};

use crate::kb::SubGoalUnit;

/// One executed action and what the world said back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub action: String,
    pub observation: String,
    /// Milestone indices first reached by this action.
    #[serde(default)]
    pub milestone_hits: Vec<usize>,
}

impl StepRecord {
    pub fn new(action: impl Into<String>, observation: impl Into<String>) -> Self {
        Self {
            action: action.into(),
            observation: observation.into(),
            milestone_hits: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubGoal {
    pub name: String,
    pub actions: Vec<StepRecord>,
    #[serde(skip)]
    pub exp_unit: Option<SubGoalUnit>,
}

impl SubGoal {
    pub fn new(name: impl Into<String>, actions: Vec<StepRecord>) -> Self {
        Self {
            name: name.into(),
            actions,
            exp_unit: None,
        }
    }

    pub fn action_texts(&self) -> Vec<&str> {
        self.actions.iter().map(|s| s.action.as_str()).collect()
    }

    /// Action sequence joined into the text used for similarity.
    pub fn render_actions(&self) -> String {
        self.action_texts().join("; ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub variation: u32,
    pub goal: String,
    pub subgoals: Vec<SubGoal>,
}

impl Trajectory {
    /// `task:variation`, matching the provenance on emitted facts.
    pub fn instance_id(&self) -> String {
        format!("{}:{}", self.task_id, self.variation)
    }

    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.subgoals.iter().flat_map(|sg| sg.actions.iter())
    }

    pub fn len(&self) -> usize {
        self.steps().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.subgoals.is_empty() {
            return Err("trajectory has no sub-goals".into());
        }
        if let Some(sg) = self.subgoals.iter().find(|sg| sg.actions.is_empty()) {
            return Err(format!("sub-goal `{}` has no actions", sg.name));
        }
        Ok(())
    }
}
