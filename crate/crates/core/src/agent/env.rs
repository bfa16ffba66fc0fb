use crate::microworld::{ActionResult, Catalog, WorldError, WorldState};

/// What the agent loop needs from a world.
pub trait Environment {
    fn goal(&self) -> &str;
    /// `task:variation` of the running instance.
    fn instance_id(&self) -> String;
    /// Observation produced by the reset.
    fn initial(&self) -> &ActionResult;
    fn step(&mut self, action: &str) -> Result<ActionResult, WorldError>;
    /// World clock; facts from the latest step carry this index.
    fn clock(&self) -> u64;
    fn score(&self) -> f64;
    fn is_complete(&self) -> bool;
    /// Actions that only observe, usable as filler.
    fn filler_actions(&self) -> Vec<String>;
}

/// A microworld episode. Text outside the action grammar is answered like a
/// refusal instead of failing the episode.
#[derive(Debug, Clone)]
pub struct MicroworldEnv {
    state: WorldState,
    initial: ActionResult,
}

impl MicroworldEnv {
    pub fn new(catalog: &Catalog, task_id: &str, variation: u32) -> Result<Self, WorldError> {
        let (state, initial) = catalog.reset(task_id, variation)?;
        Ok(Self { state, initial })
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }
}

impl Environment for MicroworldEnv {
    fn goal(&self) -> &str {
        &self.state.task().goal
    }

    fn instance_id(&self) -> String {
        self.state.task().instance_id()
    }

    fn initial(&self) -> &ActionResult {
        &self.initial
    }

    fn step(&mut self, action: &str) -> Result<ActionResult, WorldError> {
        match self.state.step(action) {
            Ok((next, result)) => {
                self.state = next;
                Ok(result)
            }
            Err(WorldError::UnparseableAction(_)) => Ok(ActionResult {
                observation: "That is not a valid action.".into(),
                facts: Vec::new(),
                milestone_hits: Vec::new(),
                terminal: self.state.is_complete(),
                accepted: false,
            }),
            Err(e) => Err(e),
        }
    }

    fn clock(&self) -> u64 {
        self.state.step_count()
    }

    fn score(&self) -> f64 {
        self.state.score()
    }

    fn is_complete(&self) -> bool {
        self.state.is_complete()
    }

    fn filler_actions(&self) -> Vec<String> {
        self.state.observation_actions()
    }
}
