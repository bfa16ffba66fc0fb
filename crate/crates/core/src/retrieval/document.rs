use serde::{Deserialize, Serialize};

use crate::kb::{EnvKnowledgeBase, ExpKnowledgeBase, SubGoalUnit, Triple};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DocPayload {
    EnvTriple(Triple),
    ExpUnit(usize),
    /// Free text with no store behind it, e.g. dataset candidates.
    Text,
}

/// Retrieval corpus element; `text` is the canonical rendering of the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: u64,
    pub text: String,
    pub payload: DocPayload,
}

impl Document {
    pub fn from_triple(id: u64, t: &Triple) -> Self {
        Self {
            id,
            text: t.render(),
            payload: DocPayload::EnvTriple(t.clone()),
        }
    }

    pub fn from_unit(id: u64, unit_id: usize, unit: &SubGoalUnit) -> Self {
        Self {
            id,
            text: unit.render(),
            payload: DocPayload::ExpUnit(unit_id),
        }
    }

    pub fn text(id: u64, text: impl Into<String>) -> Self {
        Self {
            id,
            text: text.into(),
            payload: DocPayload::Text,
        }
    }

    pub fn triple(&self) -> Option<&Triple> {
        match &self.payload {
            DocPayload::EnvTriple(t) => Some(t),
            _ => None,
        }
    }

    pub fn unit_id(&self) -> Option<usize> {
        match self.payload {
            DocPayload::ExpUnit(id) => Some(id),
            _ => None,
        }
    }
}

/// Env store as documents, ids in canonical key order.
pub fn env_corpus(kb: &EnvKnowledgeBase) -> Vec<Document> {
    kb.triples()
        .enumerate()
        .map(|(i, t)| Document::from_triple(i as u64, t))
        .collect()
}

/// Experiential store as documents; document id equals unit id.
pub fn exp_corpus(kb: &ExpKnowledgeBase) -> Vec<Document> {
    kb.iter()
        .map(|(i, u)| Document::from_unit(i as u64, i, u))
        .collect()
}

/// Retrieval request: task description, current plan text, and (for
/// experiential queries) the environmental documents retrieved first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryBundle {
    pub task_description: String,
    pub plan_text: String,
    #[serde(skip)]
    pub env_context: Vec<Document>,
}

impl QueryBundle {
    pub fn new(task_description: impl Into<String>, plan_text: impl Into<String>) -> Self {
        Self {
            task_description: task_description.into(),
            plan_text: plan_text.into(),
            env_context: Vec::new(),
        }
    }

    pub fn with_env_context(mut self, docs: Vec<Document>) -> Self {
        self.env_context = docs;
        self
    }

    /// Task description, plan text, then each context document, newline-joined.
    pub fn query_text(&self) -> String {
        let mut parts = vec![self.task_description.as_str(), self.plan_text.as_str()];
        parts.extend(self.env_context.iter().map(|d| d.text.as_str()));
        parts.join("\n")
    }
}
