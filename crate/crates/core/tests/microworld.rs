use std::collections::BTreeSet;

use dualkb::kb::{EnvKnowledgeBase, RelationRegistry, Triple};
use dualkb::microworld::{Catalog, Parent, Predicate, WorldError, WorldState};
use proptest::prelude::*;

fn catalog() -> Catalog {
    Catalog::builtin()
}

fn names_in(text: &str, names: &BTreeSet<String>) -> BTreeSet<String> {
    let lower = text.to_lowercase();
    names
        .iter()
        .filter(|n| {
            lower.match_indices(n.as_str()).any(|(i, m)| {
                let before = lower[..i].chars().next_back();
                let after = lower[i + m.len()..].chars().next();
                !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
            })
        })
        .cloned()
        .collect()
}

fn world_names(state: &WorldState) -> BTreeSet<String> {
    let task = state.task();
    task.locations
        .iter()
        .map(|l| l.name.clone())
        .chain(task.objects.iter().map(|o| o.name.clone()))
        .collect()
}

fn fact_text(facts: &[Triple]) -> String {
    facts
        .iter()
        .map(|t| format!("{} {}", t.subject, t.value))
        .collect::<Vec<_>>()
        .join(" ")
}

fn action_pool(state: &WorldState) -> Vec<String> {
    let task = state.task();
    let objects: Vec<&str> = task.objects.iter().map(|o| o.name.as_str()).collect();
    let mut pool = vec!["wait".to_string(), "look around".to_string()];
    for l in &task.locations {
        pool.push(format!("go to {}", l.name));
    }
    for o in &objects {
        for verb in ["open", "close", "take", "activate", "deactivate", "examine", "read", "focus on"] {
            pool.push(format!("{verb} {o}"));
        }
        for t in &objects {
            pool.push(format!("put {o} in {t}"));
            pool.push(format!("pour {o} into {t}"));
        }
    }
    for seg in &task.script {
        pool.extend(seg.actions.iter().cloned());
    }
    pool
}

#[test]
fn four_families_with_at_least_ten_variations() {
    let c = catalog();
    let ids: Vec<&str> = c.task_ids().collect();
    assert_eq!(ids, ["boil", "conductivity", "find", "pour"]);
    for id in ids {
        assert!(c.variation_count(id).unwrap() >= 10, "{id}");
    }
}

#[test]
fn unknown_task_and_variation() {
    let c = catalog();
    assert!(matches!(c.reset("nope", 0), Err(WorldError::UnknownTask(_))));
    assert!(matches!(c.reset("boil", 999), Err(WorldError::UnknownVariation { .. })));
    assert!(matches!(c.expert_trajectory("nope", 0), Err(WorldError::UnknownTask(_))));
}

#[test]
fn reset_is_deterministic_and_starts_at_zero() {
    let c = catalog();
    for (id, v) in c.instances() {
        let a = c.reset(&id, v).unwrap();
        let b = c.reset(&id, v).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.score(), 0.0);
        assert_eq!(a.0.step_count(), 0);
        assert!(a.1.facts.iter().all(|f| f.step_index == 0));
        assert!(a.1.milestone_hits.is_empty());
    }
}

#[test]
fn variations_move_objects_but_keep_milestone_structure() {
    let c = catalog();
    for id in ["boil", "conductivity", "find", "pour"] {
        let shape = |v: u32| {
            let t = c.task(id, v).unwrap();
            t.milestones
                .iter()
                .map(|m| {
                    let kind = match m.predicate {
                        Predicate::Holding { .. } => "holding",
                        Predicate::Inside { .. } => "inside",
                        Predicate::Active { .. } => "active",
                        Predicate::AgentAt { .. } => "agent_at",
                        Predicate::TemperatureAtLeast { .. } => "temperature",
                        Predicate::Focused { .. } => "focused",
                        Predicate::IsOpen { .. } => "is_open",
                    };
                    (kind, m.weight.to_bits())
                })
                .collect::<Vec<_>>()
        };
        let placements = |v: u32| {
            let t = c.task(id, v).unwrap();
            (
                t.start.clone(),
                t.objects
                    .iter()
                    .map(|o| (o.name.clone(), o.at.clone()))
                    .collect::<Vec<_>>(),
            )
        };
        for v in 1..c.variation_count(id).unwrap() as u32 {
            assert_eq!(shape(0), shape(v), "{id}:{v}");
            assert_ne!(placements(0), placements(v), "{id}:{v}");
        }
    }
}

#[test]
fn reset_facts_have_distinct_keys() {
    let c = catalog();
    for (id, v) in c.instances() {
        let (_, r) = c.reset(&id, v).unwrap();
        let mut kb = EnvKnowledgeBase::new(RelationRegistry::microworld_default());
        kb.ingest_facts(&r.facts, 0).unwrap();
        assert_eq!(kb.len(), r.facts.len(), "{id}:{v}");
    }
}

#[test]
fn wait_only_advances_the_clock() {
    let c = catalog();
    for (id, v) in c.instances() {
        let (s0, _) = c.reset(&id, v).unwrap();
        let (s1, r) = s0.step("wait").unwrap();
        assert!(r.accepted);
        assert!(r.facts.is_empty());
        assert_eq!(s1.step_count(), 1);
        let objects0: Vec<_> = s0.objects().collect();
        let objects1: Vec<_> = s1.objects().collect();
        assert_eq!(objects0, objects1);
        assert_eq!(s0.agent_location(), s1.agent_location());
        assert_eq!(s0.score(), s1.score());
    }
}

#[test]
fn thermometer_reports_live_temperature() {
    let c = catalog();
    let (mut s, _) = c.reset("boil", 0).unwrap();
    let mut readings = Vec::new();
    for a in [
        "go to kitchen",
        "open cupboard",
        "take pot",
        "put pot on stove",
        "activate stove",
        "take thermometer",
        "put thermometer in pot",
        "examine thermometer",
        "wait",
        "examine thermometer",
    ] {
        let live = s.object("thermometer").unwrap().temperature;
        let (next, r) = s.step(a).unwrap();
        assert!(r.accepted, "{a}: {}", r.observation);
        if a == "examine thermometer" {
            let fact = r
                .facts
                .iter()
                .find(|f| f.relation.name == "act:examine")
                .unwrap();
            assert_eq!(fact.subject.as_str(), "thermometer");
            assert_eq!(fact.value.to_string(), format!("{live} °C"));
            readings.push(live);
        }
        s = next;
    }
    assert!(readings[0] > 20.0);
    assert!(readings[1] > readings[0]);
}

#[test]
fn refusal_leaves_state_untouched() {
    let c = catalog();
    let (s, _) = c.reset("boil", 0).unwrap();
    for a in ["take stove", "open pot", "go to attic", "take pot", "activate counter", "read towel"] {
        let (next, r) = s.step(a).unwrap();
        assert!(!r.accepted, "{a}");
        assert!(r.facts.is_empty());
        assert_eq!(next, s);
    }
    assert!(matches!(s.step("juggle pot"), Err(WorldError::UnparseableAction(_))));
}

#[test]
fn expert_trajectories_score_full_and_segment_per_milestone() {
    let c = catalog();
    for (id, v) in c.instances() {
        let t = c.expert_trajectory(&id, v).unwrap();
        assert_eq!(t, c.expert_trajectory(&id, v).unwrap());
        let spec = c.task(&id, v).unwrap();
        assert_eq!(t.subgoals.len(), spec.milestones.len());
        let (mut s, _) = c.reset(&id, v).unwrap();
        for step in t.steps() {
            s = s.step(&step.action).unwrap().0;
        }
        assert_eq!(s.score(), 100.0, "{id}:{v}");
        for (i, sg) in t.subgoals.iter().enumerate() {
            assert_eq!(sg.actions.last().unwrap().milestone_hits, vec![i], "{id}:{v}");
        }
    }
}

const TWO_HALVES: &str = r#"
id = "halves"
goal = "Carry the stone and the shell."
start = "a"

[[locations]]
name = "a"
exits = ["b", "c", "d"]
[[locations]]
name = "b"
exits = ["a"]
[[locations]]
name = "c"
exits = ["a"]
[[locations]]
name = "d"
exits = ["a"]

[[objects]]
name = "stone"
at = "b"
properties = ["portable"]

[[objects]]
name = "shell"
at = "c"
properties = ["portable"]

[[milestones]]
weight = 50
predicate = { kind = "holding", object = "stone" }

[[milestones]]
weight = 50
predicate = { kind = "holding", object = "shell" }

[[script]]
actions = ["go to b", "take stone"]

[[script]]
actions = ["go to a", "go to c", "take shell"]
"#;

#[test]
fn truncated_after_first_of_two_equal_milestones_scores_half() {
    let mut c = catalog();
    c.add_source(TWO_HALVES).unwrap();
    let t = c.expert_trajectory("halves", 0).unwrap();
    let (mut s, _) = c.reset("halves", 0).unwrap();
    for step in &t.subgoals[0].actions {
        s = s.step(&step.action).unwrap().0;
    }
    assert_eq!(s.score(), 50.0);
    for step in &t.subgoals[1].actions {
        s = s.step(&step.action).unwrap().0;
    }
    assert_eq!(s.score(), 100.0);
}

#[test]
fn task_files_load_from_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("halves.toml"), TWO_HALVES).unwrap();
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let mut c = Catalog::empty(RelationRegistry::microworld_default());
    assert_eq!(c.load_dir(dir.path()).unwrap(), 1);
    assert_eq!(c.task_ids().collect::<Vec<_>>(), ["halves"]);
}

fn instance_strategy() -> impl Strategy<Value = (String, u32)> {
    let all = catalog().instances();
    (0..all.len()).prop_map(move |i| all[i].clone())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_play_keeps_world_invariants(
        (id, v) in instance_strategy(),
        picks in proptest::collection::vec(any::<prop::sample::Index>(), 1..40),
    ) {
        let c = catalog();
        let (s0, r0) = c.reset(&id, v).unwrap();
        let names = world_names(&s0);
        let pool = action_pool(&s0);
        let object_names: BTreeSet<String> = s0.objects().map(|(n, _)| n.clone()).collect();
        prop_assert_eq!(names_in(&r0.observation, &names), names_in(&fact_text(&r0.facts), &names));

        let mut s = s0.clone();
        let mut replay = s0.clone();
        let mut score = 0.0;
        for pick in &picks {
            let action = pick.get(&pool);
            let (next, r) = s.step(action).unwrap();
            prop_assert_eq!(names_in(&r.observation, &names), names_in(&fact_text(&r.facts), &names));
            prop_assert!(r.facts.iter().all(|f| f.step_index == next.step_count()));
            prop_assert!(next.score() >= score);
            score = next.score();
            prop_assert!((0.0..=100.0).contains(&score));
            let now: BTreeSet<String> = next.objects().map(|(n, _)| n.clone()).collect();
            prop_assert_eq!(&now, &object_names);
            for (n, o) in next.objects() {
                prop_assert!(o.temperature.is_finite());
                let mut cur = &o.parent;
                let mut hops = 0;
                while let Parent::Object(p) = cur {
                    prop_assert!(p != n);
                    cur = &next.object(p).unwrap().parent;
                    hops += 1;
                    prop_assert!(hops <= object_names.len());
                }
            }
            let keys: BTreeSet<_> = r.facts.iter().map(Triple::key).collect();
            prop_assert_eq!(keys.len(), r.facts.len());
            replay = replay.step(action).unwrap().0;
            s = next;
        }
        prop_assert_eq!(s, replay);
    }
}
