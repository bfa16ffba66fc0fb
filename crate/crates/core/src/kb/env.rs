use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use super::{EntityId, KbError, RelationRegistry, Triple};

type Key = (EntityId, String);

/// Result of a single upsert.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Upsert {
    Inserted,
    Superseded(Triple),
    Unchanged,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub added: usize,
    pub superseded: usize,
    pub unchanged: usize,
}

impl IngestStats {
    pub fn merge(&mut self, other: IngestStats) {
        self.added += other.added;
        self.superseded += other.superseded;
        self.unchanged += other.unchanged;
    }
}

/// Environmental knowledge: one triple per `(subject, relation)` key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EnvKnowledgeBase {
    registry: RelationRegistry,
    entries: BTreeMap<Key, Triple>,
}

impl EnvKnowledgeBase {
    pub fn new(registry: RelationRegistry) -> Self {
        Self {
            registry,
            entries: BTreeMap::new(),
        }
    }

    pub fn registry(&self) -> &RelationRegistry {
        &self.registry
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Triples in canonical `(subject, relation)` order.
    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.entries.values()
    }

    pub fn to_vec(&self) -> Vec<Triple> {
        self.entries.values().cloned().collect()
    }

    pub fn get(&self, subject: &EntityId, relation: &str) -> Option<&Triple> {
        self.entries.get(&(subject.clone(), relation.to_string()))
    }

    fn check_write(&self, t: &Triple, stored_step: Option<u64>) -> Result<(), KbError> {
        self.registry.check(&t.relation)?;
        match stored_step {
            Some(stored) if t.step_index < stored => Err(KbError::StaleWrite {
                subject: t.subject.to_string(),
                relation: t.relation.name.clone(),
                stored,
                incoming: t.step_index,
            }),
            _ => Ok(()),
        }
    }

    /// Inserts `t`, replacing any stored triple with the same key. Equal steps
    /// resolve in favor of the incoming triple.
    pub fn upsert(&mut self, t: Triple) -> Result<Upsert, KbError> {
        let key = t.key();
        let stored = self.entries.get(&key);
        self.check_write(&t, stored.map(|s| s.step_index))?;
        Ok(self.apply(key, t))
    }

    fn apply(&mut self, key: Key, t: Triple) -> Upsert {
        match self.entries.insert(key.clone(), t) {
            None => Upsert::Inserted,
            Some(old) if old == self.entries[&key] => Upsert::Unchanged,
            Some(old) => Upsert::Superseded(old),
        }
    }

    /// Applies a batch of facts acquired at `step`, left to right, all or nothing.
    pub fn ingest_facts(&mut self, facts: &[Triple], step: u64) -> Result<IngestStats, KbError> {
        let mut staged: BTreeMap<Key, u64> = BTreeMap::new();
        for t in facts {
            if t.step_index != step {
                return Err(KbError::StepMismatch {
                    expected: step,
                    found: t.step_index,
                });
            }
            let key = t.key();
            let stored = staged
                .get(&key)
                .copied()
                .or_else(|| self.entries.get(&key).map(|s| s.step_index));
            self.check_write(t, stored)?;
            staged.insert(key, t.step_index);
        }
        let mut stats = IngestStats::default();
        for t in facts {
            match self.apply(t.key(), t.clone()) {
                Upsert::Inserted => stats.added += 1,
                Upsert::Superseded(_) => stats.superseded += 1,
                Upsert::Unchanged => stats.unchanged += 1,
            }
        }
        Ok(stats)
    }

    /// Every triple naming `e` as subject or entity value, ordered by
    /// `(relation, step_index)` and then by subject.
    pub fn query_entity(&self, e: &EntityId) -> Vec<Triple> {
        let mut hits: Vec<Triple> = self
            .entries
            .values()
            .filter(|t| t.mentions(e))
            .cloned()
            .collect();
        hits.sort_by(|a, b| {
            (&a.relation.name, a.step_index, &a.subject).cmp(&(
                &b.relation.name,
                b.step_index,
                &b.subject,
            ))
        });
        hits
    }

    /// Distinct entities appearing in any slot.
    pub fn entities(&self) -> BTreeSet<EntityId> {
        let mut out = BTreeSet::new();
        for t in self.entries.values() {
            out.insert(t.subject.clone());
            if let Some(e) = t.value.entity() {
                out.insert(e.clone());
            }
        }
        out
    }

    pub(crate) fn insert_loaded(&mut self, t: Triple) -> Result<(), KbError> {
        self.registry.check(&t.relation)?;
        let key = t.key();
        if self.entries.insert(key, t).is_some() {
            return Err(KbError::Parse {
                line: 0,
                message: "duplicate (subject, relation) key".into(),
            });
        }
        Ok(())
    }
}

/// Single-writer, many-reader handle over an environmental store.
#[derive(Debug, Clone, Default)]
pub struct SharedEnvKb {
    inner: Arc<RwLock<EnvKnowledgeBase>>,
}

impl SharedEnvKb {
    pub fn new(kb: EnvKnowledgeBase) -> Self {
        Self {
            inner: Arc::new(RwLock::new(kb)),
        }
    }

    /// Consistent copy of the store as of the last completed write.
    pub fn snapshot(&self) -> EnvKnowledgeBase {
        self.inner.read().expect("kb lock poisoned").clone()
    }

    pub fn ingest_facts(&self, facts: &[Triple], step: u64) -> Result<IngestStats, KbError> {
        self.inner
            .write()
            .expect("kb lock poisoned")
            .ingest_facts(facts, step)
    }

    pub fn with_read<R>(&self, f: impl FnOnce(&EnvKnowledgeBase) -> R) -> R {
        f(&self.inner.read().expect("kb lock poisoned"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{Channel, Relation, TripleValue};

    fn reg() -> RelationRegistry {
        let mut r = RelationRegistry::microworld_default();
        r.register(Relation::new("contains", Channel::Observation).unwrap())
            .unwrap();
        r
    }

    fn t(s: &str, rel: &str, v: TripleValue, step: u64) -> Triple {
        let r = reg().relation(rel).unwrap();
        Triple::new(EntityId::new(s).unwrap(), r, v, step, "task")
    }

    fn ent(s: &str) -> TripleValue {
        TripleValue::Entity(EntityId::new(s).unwrap())
    }

    #[test]
    fn newer_reading_supersedes() {
        let mut kb = EnvKnowledgeBase::new(reg());
        kb.upsert(t("thermometer", "act:examine", TripleValue::attribute("20°C"), 3))
            .unwrap();
        let out = kb
            .upsert(t("thermometer", "act:examine", TripleValue::attribute("24°C"), 9))
            .unwrap();
        assert!(matches!(out, Upsert::Superseded(_)));
        assert_eq!(kb.len(), 1);
        let only = kb.triples().next().unwrap();
        assert_eq!(only.value, TripleValue::attribute("24°C"));
    }

    #[test]
    fn identical_upsert_is_idempotent() {
        let mut kb = EnvKnowledgeBase::new(reg());
        let a = t("pot", "located_in", ent("stove"), 2);
        kb.upsert(a.clone()).unwrap();
        let before = kb.clone();
        assert_eq!(kb.upsert(a).unwrap(), Upsert::Unchanged);
        assert_eq!(kb, before);
    }

    #[test]
    fn stale_and_unregistered_writes_fail() {
        let mut kb = EnvKnowledgeBase::new(reg());
        kb.upsert(t("pot", "located_in", ent("stove"), 5)).unwrap();
        let err = kb.upsert(t("pot", "located_in", ent("sink"), 4)).unwrap_err();
        assert!(matches!(err, KbError::StaleWrite { .. }));
        let bogus = Triple::new(
            EntityId::new("pot").unwrap(),
            Relation::new("smells_like", Channel::Observation).unwrap(),
            TripleValue::attribute("soup"),
            6,
            "task",
        );
        assert!(matches!(
            kb.upsert(bogus),
            Err(KbError::UnregisteredRelation(_))
        ));
        let wrong_channel = Triple::new(
            EntityId::new("pot").unwrap(),
            Relation::new("located_in", Channel::ActionFeedback).unwrap(),
            ent("sink"),
            6,
            "task",
        );
        assert!(matches!(
            kb.upsert(wrong_channel),
            Err(KbError::ChannelConflict { .. })
        ));
    }

    #[test]
    fn equal_step_conflict_prefers_incoming() {
        let mut kb = EnvKnowledgeBase::new(reg());
        kb.upsert(t("pot", "located_in", ent("stove"), 5)).unwrap();
        kb.upsert(t("pot", "located_in", ent("sink"), 5)).unwrap();
        assert_eq!(
            kb.get(&EntityId::new("pot").unwrap(), "located_in").unwrap().value,
            ent("sink")
        );
    }

    #[test]
    fn fifty_distinct_keys() {
        let mut kb = EnvKnowledgeBase::new(reg());
        let rels = ["located_in", "state", "temperature", "phase", "exits"];
        let mut keys = BTreeSet::new();
        for i in 0..50 {
            let subject = format!("obj{}", i / 5);
            let rel = rels[i % 5];
            keys.insert((subject.clone(), rel.to_string()));
            kb.upsert(t(&subject, rel, TripleValue::attribute(format!("v{i}")), 1))
                .unwrap();
        }
        assert_eq!(kb.len(), 50);
        let stored: BTreeSet<_> = kb
            .triples()
            .map(|t| (t.subject.to_string(), t.relation.name.clone()))
            .collect();
        assert_eq!(stored, keys);
    }

    #[test]
    fn batch_is_atomic_and_last_duplicate_wins() {
        let mut kb = EnvKnowledgeBase::new(reg());
        assert_eq!(kb.ingest_facts(&[], 0).unwrap(), IngestStats::default());
        let batch = vec![
            t("pot", "state", TripleValue::attribute("A"), 1),
            t("pot", "state", TripleValue::attribute("B"), 1),
        ];
        kb.ingest_facts(&batch, 1).unwrap();
        let once = kb.clone();
        kb.ingest_facts(&batch, 1).unwrap();
        assert_eq!(kb, once);
        assert_eq!(
            kb.get(&EntityId::new("pot").unwrap(), "state").unwrap().value,
            TripleValue::attribute("B")
        );

        let before = kb.clone();
        let bad = vec![
            t("lid", "state", TripleValue::attribute("x"), 0),
            t("pot", "state", TripleValue::attribute("C"), 0),
        ];
        assert!(kb.ingest_facts(&bad, 0).is_err());
        assert_eq!(kb, before);
        let mismatched = vec![t("lid", "state", TripleValue::attribute("x"), 7)];
        assert!(matches!(
            kb.ingest_facts(&mismatched, 8),
            Err(KbError::StepMismatch { .. })
        ));
    }

    fn scan_oracle(all: &[Triple], e: &EntityId) -> BTreeSet<Triple> {
        all.iter()
            .filter(|t| &t.subject == e || matches!(&t.value, TripleValue::Entity(v) if v == e))
            .cloned()
            .collect()
    }

    #[test]
    fn query_entity_matches_scan() {
        let mut kb = EnvKnowledgeBase::new(reg());
        let facts = vec![
            t("stove", "contains", ent("pot"), 1),
            t("pot", "act:examine", TripleValue::attribute("empty"), 1),
            t("cup", "located_in", ent("table"), 1),
        ];
        kb.ingest_facts(&facts, 1).unwrap();
        let pot = EntityId::new("pot").unwrap();
        let got = kb.query_entity(&pot);
        assert_eq!(got.len(), 2);
        assert_eq!(got.iter().cloned().collect::<BTreeSet<_>>(), scan_oracle(&facts, &pot));
        assert!(kb.query_entity(&EntityId::new("unicorn").unwrap()).is_empty());

        let mut reversed = EnvKnowledgeBase::new(reg());
        let rev: Vec<_> = facts.iter().rev().cloned().collect();
        reversed.ingest_facts(&rev, 1).unwrap();
        assert_eq!(reversed.query_entity(&pot), got);
    }

    #[test]
    fn shared_handle_serializes_writes() {
        let shared = SharedEnvKb::new(EnvKnowledgeBase::new(reg()));
        let handles: Vec<_> = (0..4)
            .map(|i| {
                let s = shared.clone();
                std::thread::spawn(move || {
                    let f = vec![t(&format!("o{i}"), "state", TripleValue::attribute("x"), 0)];
                    s.ingest_facts(&f, 0).unwrap();
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(shared.snapshot().len(), 4);
        assert_eq!(shared.with_read(|kb| kb.entities().len()), 4);
    }
}
