use std::fmt;

use serde::{Deserialize, Serialize};

use super::KbError;

/// Lowercase, trim, and collapse internal whitespace runs to one space.
pub fn normalize_text(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Normalized, non-empty entity name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EntityId(String);

impl EntityId {
    pub fn new(raw: &str) -> Result<Self, KbError> {
        let name = normalize_text(raw);
        if name.is_empty() {
            return Err(KbError::EmptyEntity);
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for EntityId {
    type Error = KbError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(&value)
    }
}

impl From<EntityId> for String {
    fn from(value: EntityId) -> Self {
        value.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// How a relation's facts reach the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Observation,
    ActionFeedback,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Relation {
    pub name: String,
    pub channel: Channel,
}

impl Relation {
    pub fn new(name: &str, channel: Channel) -> Result<Self, KbError> {
        let name = normalize_text(name);
        if name.is_empty() {
            return Err(KbError::EmptyRelation);
        }
        Ok(Self { name, channel })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TripleValue {
    Entity(EntityId),
    Attribute { text: String, unit: Option<String> },
}

impl TripleValue {
    pub fn attribute(text: impl Into<String>) -> Self {
        Self::Attribute {
            text: text.into(),
            unit: None,
        }
    }

    pub fn measured(text: impl Into<String>, unit: impl Into<String>) -> Self {
        Self::Attribute {
            text: text.into(),
            unit: Some(unit.into()),
        }
    }

    pub fn entity(&self) -> Option<&EntityId> {
        match self {
            Self::Entity(e) => Some(e),
            Self::Attribute { .. } => None,
        }
    }
}

impl fmt::Display for TripleValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Entity(e) => write!(f, "{e}"),
            Self::Attribute { text, unit: None } => f.write_str(text),
            Self::Attribute {
                text,
                unit: Some(unit),
            } => write!(f, "{text} {unit}"),
        }
    }
}

/// One unit of environmental knowledge.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub subject: EntityId,
    pub relation: Relation,
    pub value: TripleValue,
    pub step_index: u64,
    pub task_id: String,
}

impl Triple {
    pub fn new(
        subject: EntityId,
        relation: Relation,
        value: TripleValue,
        step_index: u64,
        task_id: impl Into<String>,
    ) -> Self {
        Self {
            subject,
            relation,
            value,
            step_index,
            task_id: task_id.into(),
        }
    }

    /// Supersession key.
    pub fn key(&self) -> (EntityId, String) {
        (self.subject.clone(), self.relation.name.clone())
    }

    /// True when `e` fills either entity slot of the triple.
    pub fn mentions(&self, e: &EntityId) -> bool {
        &self.subject == e || self.value.entity() == Some(e)
    }

    /// Canonical retrieval text: `subject | relation | value [unit]`.
    pub fn render(&self) -> String {
        format!("{} | {} | {}", self.subject, self.relation.name, self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Expert,
    SelfGenerated,
}

/// One unit of experiential knowledge, keyed by sub-goal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubGoalUnit {
    pub name: String,
    pub relevant_env_knowledge: Vec<Triple>,
    pub associated_entities: Vec<EntityId>,
    pub reflections: Vec<String>,
    pub action_trajectory: Vec<String>,
    pub provenance: Provenance,
    pub source_task_id: String,
}

impl SubGoalUnit {
    pub fn validate(&self) -> Result<(), KbError> {
        if self.name.trim().is_empty() {
            return Err(KbError::InvalidUnit("empty name".into()));
        }
        if self.action_trajectory.is_empty() {
            return Err(KbError::InvalidUnit("empty action trajectory".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.associated_entities {
            if !seen.insert(e) {
                return Err(KbError::InvalidUnit(format!("duplicate entity `{e}`")));
            }
        }
        Ok(())
    }

    /// Canonical retrieval text: name, entities, reflections, then actions, one block per line.
    pub fn render(&self) -> String {
        let entities = self
            .associated_entities
            .iter()
            .map(EntityId::as_str)
            .collect::<Vec<_>>()
            .join(", ");
        format!(
            "{}\n{}\n{}\n{}",
            self.name,
            entities,
            self.reflections.join(" "),
            self.action_trajectory.join("; ")
        )
    }
}
