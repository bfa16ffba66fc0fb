//! Line-delimited JSON persistence for both knowledge bases.
//!
//! Layout: one header record, then relation records in name order, then
//! triple records in key order, then unit records in id order. Field order
//! inside each record is fixed, so equal stores produce identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Channel, EntityId, EnvKnowledgeBase, ExpKnowledgeBase, KbError, Provenance, Relation,
    RelationRegistry, SubGoalUnit, Triple, TripleValue,
};

pub const KB_SCHEMA: &str = "dualkb.kb";
pub const KB_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeBases {
    pub env: EnvKnowledgeBase,
    pub exp: ExpKnowledgeBase,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ValueKind {
    Entity,
    Attribute,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct TripleRecord {
    task_id: String,
    subject: String,
    relation: String,
    channel: Channel,
    value_kind: ValueKind,
    value: String,
    unit: Option<String>,
    step_index: u64,
}

impl From<&Triple> for TripleRecord {
    fn from(t: &Triple) -> Self {
        let (value_kind, value, unit) = match &t.value {
            TripleValue::Entity(e) => (ValueKind::Entity, e.to_string(), None),
            TripleValue::Attribute { text, unit } => {
                (ValueKind::Attribute, text.clone(), unit.clone())
            }
        };
        Self {
            task_id: t.task_id.clone(),
            subject: t.subject.to_string(),
            relation: t.relation.name.clone(),
            channel: t.relation.channel,
            value_kind,
            value,
            unit,
            step_index: t.step_index,
        }
    }
}

impl TryFrom<TripleRecord> for Triple {
    type Error = KbError;

    fn try_from(r: TripleRecord) -> Result<Self, Self::Error> {
        let value = match r.value_kind {
            ValueKind::Entity => TripleValue::Entity(EntityId::new(&r.value)?),
            ValueKind::Attribute => TripleValue::Attribute {
                text: r.value,
                unit: r.unit,
            },
        };
        Ok(Triple::new(
            EntityId::new(&r.subject)?,
            Relation::new(&r.relation, r.channel)?,
            value,
            r.step_index,
            r.task_id,
        ))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct UnitRecord {
    id: usize,
    name: String,
    provenance: Provenance,
    source_task_id: String,
    associated_entities: Vec<EntityId>,
    reflections: Vec<String>,
    action_trajectory: Vec<String>,
    relevant_env_knowledge: Vec<TripleRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header { schema: String, version: u32 },
    Relation { name: String, channel: Channel },
    Triple(TripleRecord),
    Unit(UnitRecord),
}

fn push_line(out: &mut String, rec: &Record) {
    let line = serde_json::to_string(rec).expect("records always serialize");
    writeln!(out, "{line}").expect("writing to a String cannot fail");
}

impl KnowledgeBases {
    pub fn new(env: EnvKnowledgeBase, exp: ExpKnowledgeBase) -> Self {
        Self { env, exp }
    }

    pub fn to_canonical_string(&self) -> String {
        let mut out = String::new();
        push_line(
            &mut out,
            &Record::Header {
                schema: KB_SCHEMA.into(),
                version: KB_SCHEMA_VERSION,
            },
        );
        for rel in self.env.registry().iter() {
            push_line(
                &mut out,
                &Record::Relation {
                    name: rel.name,
                    channel: rel.channel,
                },
            );
        }
        for t in self.env.triples() {
            push_line(&mut out, &Record::Triple(t.into()));
        }
        for (id, u) in self.exp.iter() {
            push_line(
                &mut out,
                &Record::Unit(UnitRecord {
                    id,
                    name: u.name.clone(),
                    provenance: u.provenance,
                    source_task_id: u.source_task_id.clone(),
                    associated_entities: u.associated_entities.clone(),
                    reflections: u.reflections.clone(),
                    action_trajectory: u.action_trajectory.clone(),
                    relevant_env_knowledge: u.relevant_env_knowledge.iter().map(Into::into).collect(),
                }),
            );
        }
        out
    }

    pub fn parse(src: &str) -> Result<Self, KbError> {
        let mut lines = src.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let parse_err = |line: usize, message: String| KbError::Parse {
            line: line + 1,
            message,
        };
        let (n, first) = lines
            .next()
            .ok_or_else(|| parse_err(0, "missing header record".into()))?;
        match serde_json::from_str::<Record>(first).map_err(|e| parse_err(n, e.to_string()))? {
            Record::Header { schema, version } => {
                if schema != KB_SCHEMA {
                    return Err(parse_err(n, format!("unexpected schema `{schema}`")));
                }
                if version != KB_SCHEMA_VERSION {
                    return Err(KbError::SchemaVersionMismatch {
                        found: version,
                        expected: KB_SCHEMA_VERSION,
                    });
                }
            }
            _ => return Err(parse_err(n, "first record must be the header".into())),
        }

        let mut registry = RelationRegistry::new();
        let mut triples = Vec::new();
        let mut exp = ExpKnowledgeBase::new();
        for (n, line) in lines {
            let rec: Record = serde_json::from_str(line).map_err(|e| parse_err(n, e.to_string()))?;
            let with_line = |e: KbError| match e {
                KbError::Parse { message, .. } => parse_err(n, message),
                other => other,
            };
            match rec {
                Record::Header { .. } => return Err(parse_err(n, "duplicate header".into())),
                Record::Relation { name, channel } => registry
                    .register(Relation::new(&name, channel).map_err(with_line)?)
                    .map_err(with_line)?,
                Record::Triple(r) => triples.push((n, Triple::try_from(r).map_err(with_line)?)),
                Record::Unit(r) => {
                    if r.id != exp.len() {
                        return Err(parse_err(
                            n,
                            format!("unit id {} out of order, expected {}", r.id, exp.len()),
                        ));
                    }
                    let relevant = r
                        .relevant_env_knowledge
                        .into_iter()
                        .map(Triple::try_from)
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(with_line)?;
                    exp.store(SubGoalUnit {
                        name: r.name,
                        relevant_env_knowledge: relevant,
                        associated_entities: r.associated_entities,
                        reflections: r.reflections,
                        action_trajectory: r.action_trajectory,
                        provenance: r.provenance,
                        source_task_id: r.source_task_id,
                    })
                    .map_err(|e| parse_err(n, e.to_string()))?;
                }
            }
        }
        let mut env = EnvKnowledgeBase::new(registry);
        for (n, t) in triples {
            env.insert_loaded(t).map_err(|e| match e {
                KbError::Parse { message, .. } => parse_err(n, message),
                other => other,
            })?;
        }
        Ok(Self { env, exp })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), KbError> {
        std::fs::write(path, self.to_canonical_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KbError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> KnowledgeBases {
        let reg = RelationRegistry::microworld_default();
        let mut env = EnvKnowledgeBase::new(reg.clone());
        let t = Triple::new(
            EntityId::new("thermometer").unwrap(),
            reg.relation("act:examine").unwrap(),
            TripleValue::measured("24", "°C"),
            9,
            "boil",
        );
        env.upsert(t.clone()).unwrap();
        env.upsert(Triple::new(
            EntityId::new("pot").unwrap(),
            reg.relation("located_in").unwrap(),
            TripleValue::Entity(EntityId::new("stove").unwrap()),
            4,
            "boil",
        ))
        .unwrap();
        let mut exp = ExpKnowledgeBase::new();
        exp.store(SubGoalUnit {
            name: "examine thermometer".into(),
            relevant_env_knowledge: vec![t],
            associated_entities: vec![EntityId::new("thermometer").unwrap()],
            reflections: vec!["Read the \"live\" value.".into()],
            action_trajectory: vec!["examine thermometer".into()],
            provenance: Provenance::SelfGenerated,
            source_task_id: "boil".into(),
        })
        .unwrap();
        KnowledgeBases::new(env, exp)
    }

    #[test]
    fn round_trip() {
        let kb = sample();
        let text = kb.to_canonical_string();
        assert_eq!(KnowledgeBases::parse(&text).unwrap(), kb);
        let empty = KnowledgeBases::default();
        assert_eq!(KnowledgeBases::parse(&empty.to_canonical_string()).unwrap(), empty);
    }

    #[test]
    fn triple_field_order_is_fixed() {
        let text = sample().to_canonical_string();
        let line = text.lines().find(|l| l.contains("\"thermometer\"")).unwrap();
        assert_eq!(
            line,
            "{\"record\":\"triple\",\"task_id\":\"boil\",\"subject\":\"thermometer\",\"relation\":\"act:examine\",\"channel\":\"action_feedback\",\"value_kind\":\"attribute\",\"value\":\"24\",\"unit\":\"°C\",\"step_index\":9}"
        );
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = sample().to_canonical_string();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[3] = "{not json";
        match KnowledgeBases::parse(&lines.join("\n")) {
            Err(KbError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        let bumped = text.replacen("\"version\":1", "\"version\":7", 1);
        assert!(matches!(
            KnowledgeBases::parse(&bumped),
            Err(KbError::SchemaVersionMismatch { found: 7, .. })
        ));
        assert!(matches!(KnowledgeBases::parse(""), Err(KbError::Parse { .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.jsonl");
        let kb = sample();
        kb.save(&path).unwrap();
        assert_eq!(KnowledgeBases::load(&path).unwrap(), kb);
        assert!(matches!(
            KnowledgeBases::load(dir.path().join("missing")),
            Err(KbError::Io(_))
        ));
    }
}
