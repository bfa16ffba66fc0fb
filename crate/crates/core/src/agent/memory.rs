use serde::{Deserialize, Serialize};

use super::{EvalVerdict, Plan};
use crate::kb::{EnvKnowledgeBase, IngestStats, KbError, RelationRegistry, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalKind {
    Env,
    Exp,
}

/// `step` is the number of environment steps taken when the event was logged.
#[derive(Debug, Clone, PartialEq)]
pub enum MemoryEvent {
    Observed {
        step: usize,
        observation: String,
        facts: Vec<Triple>,
        clock: u64,
    },
    PlanSet {
        step: usize,
        plan: Plan,
    },
    ActionTaken {
        step: usize,
        action: String,
        observation: String,
        facts: Vec<Triple>,
        clock: u64,
        accepted: bool,
        milestone_hits: Vec<usize>,
    },
    RetrievalMade {
        step: usize,
        kind: RetrievalKind,
        query: String,
        doc_ids: Vec<u64>,
    },
    VerdictMade {
        step: usize,
        verdict: EvalVerdict,
    },
}

impl MemoryEvent {
    pub fn step(&self) -> usize {
        match self {
            Self::Observed { step, .. }
            | Self::PlanSet { step, .. }
            | Self::ActionTaken { step, .. }
            | Self::RetrievalMade { step, .. }
            | Self::VerdictMade { step, .. } => *step,
        }
    }

    /// One-line text form for prompts and logs.
    pub fn render(&self) -> String {
        match self {
            Self::Observed { observation, .. } => format!("observed: {observation}"),
            Self::PlanSet { plan, .. } => format!("plan: {}", plan.steps.join(" / ")),
            Self::ActionTaken {
                action, observation, ..
            } => format!("action: {action} => {observation}"),
            Self::RetrievalMade { kind, doc_ids, .. } => format!("retrieved {kind:?} docs {doc_ids:?}"),
            Self::VerdictMade { verdict, .. } => {
                format!("verdict: {:?} ({})", verdict.status, verdict.rationale)
            }
        }
    }
}

/// Append-only event log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryLog {
    events: Vec<MemoryEvent>,
}

impl MemoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an event; its step may not precede the last one.
    pub fn push(&mut self, event: MemoryEvent) {
        if let Some(last) = self.events.last() {
            assert!(event.step() >= last.step(), "memory events must not go back in time");
        }
        self.events.push(event);
    }

    pub fn events(&self) -> &[MemoryEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// The last `n` events.
    pub fn window(&self, n: usize) -> &[MemoryEvent] {
        &self.events[self.events.len().saturating_sub(n)..]
    }

    pub fn actions(&self) -> impl Iterator<Item = &MemoryEvent> {
        self.events
            .iter()
            .filter(|e| matches!(e, MemoryEvent::ActionTaken { .. }))
    }

    /// Feeds every logged fact batch into `kb`, in order, stopping before the
    /// `stop_before`-th action if given.
    pub fn replay_into(&self, kb: &mut EnvKnowledgeBase, stop_before: Option<usize>) -> Result<IngestStats, KbError> {
        let mut stats = IngestStats::default();
        let mut actions = 0;
        for e in &self.events {
            match e {
                MemoryEvent::Observed { facts, clock, .. } => stats.merge(kb.ingest_facts(facts, *clock)?),
                MemoryEvent::ActionTaken { facts, clock, .. } => {
                    if stop_before == Some(actions) {
                        break;
                    }
                    actions += 1;
                    stats.merge(kb.ingest_facts(facts, *clock)?);
                }
                _ => {}
            }
        }
        Ok(stats)
    }

    /// Env store rebuilt from the log alone.
    pub fn replay(&self, registry: RelationRegistry) -> Result<EnvKnowledgeBase, KbError> {
        let mut kb = EnvKnowledgeBase::new(registry);
        self.replay_into(&mut kb, None)?;
        Ok(kb)
    }
}
