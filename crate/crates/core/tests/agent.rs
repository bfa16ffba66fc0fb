use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use dualkb::agent::*;
use dualkb::chat::{Canned, CassetteEntry, ChatError, HttpChat, HttpChatConfig, Replay};
use dualkb::dataset::{collect_env_knowledge, Trajectory};
use dualkb::distill::{distill_trajectory, DistillerBackend};
use dualkb::embedder::EmbeddingModel;
use dualkb::kb::{EnvKnowledgeBase, ExpKnowledgeBase, Provenance};
use dualkb::microworld::Catalog;
use dualkb::retrieval::TokenF1;

fn expert_exp_kb(c: &Catalog, ids: &[(&str, u32)]) -> ExpKnowledgeBase {
    let mut kb = ExpKnowledgeBase::new();
    for &(task, v) in ids {
        let mut t = c.expert_trajectory(task, v).unwrap();
        let snap = collect_env_knowledge(c, &t).unwrap();
        distill_trajectory(&mut t, &snap, Provenance::Expert, &DistillerBackend::RuleBased).unwrap();
        for sg in t.subgoals {
            kb.store(sg.exp_unit.unwrap()).unwrap();
        }
    }
    kb
}

struct Fixture {
    catalog: Catalog,
    model: EmbeddingModel<f64>,
}

impl Fixture {
    fn new() -> Self {
        Self {
            catalog: Catalog::builtin(),
            model: EmbeddingModel::with_dims(4096, 16, 3),
        }
    }

    fn run<D: DecisionModel>(
        &self,
        task: &str,
        v: u32,
        dm: &mut D,
        exp: &ExpKnowledgeBase,
        cfg: &AgentConfig,
        budget: usize,
    ) -> (EpisodeResult, EnvKnowledgeBase) {
        let mut env = MicroworldEnv::new(&self.catalog, task, v).unwrap();
        let mut env_kb = EnvKnowledgeBase::new(self.catalog.registry().clone());
        let retriever = Retriever {
            encoder: &self.model,
            scorer: &TokenF1,
        };
        let r = run_episode(&mut env, &mut env_kb, exp, dm, &retriever, cfg, budget).unwrap();
        (r, env_kb)
    }
}

fn expert(c: &Catalog, task: &str, v: u32) -> Trajectory {
    c.expert_trajectory(task, v).unwrap()
}

#[test]
fn oracle_completes_every_task_in_expert_length() {
    let f = Fixture::new();
    let exp = expert_exp_kb(&f.catalog, &[("boil", 1), ("find", 1)]);
    for task in ["boil", "conductivity", "find", "pour"] {
        let t = expert(&f.catalog, task, 0);
        let mut dm = ScriptedOracle::new(&t);
        let (r, _) = f.run(task, 0, &mut dm, &exp, &AgentConfig::default(), 100);
        assert_eq!(r.score, 100.0, "{task}");
        assert!(r.completed);
        assert_eq!(r.steps_used, t.len(), "{task}");
        assert!(r.error.is_none());
        assert_eq!(r.trajectory.len(), t.len());
    }
}

#[test]
fn budget_of_one_takes_exactly_one_step() {
    let f = Fixture::new();
    let t = expert(&f.catalog, "boil", 0);
    let (r, _) = f.run(
        "boil",
        0,
        &mut ScriptedOracle::new(&t),
        &ExpKnowledgeBase::new(),
        &AgentConfig::default(),
        1,
    );
    assert_eq!(r.steps_used, 1);
    assert!(!r.completed);
    let mut env = MicroworldEnv::new(&f.catalog, "boil", 0).unwrap();
    let mut kb = EnvKnowledgeBase::new(f.catalog.registry().clone());
    let retriever = Retriever {
        encoder: &f.model,
        scorer: &TokenF1,
    };
    let err = run_episode(
        &mut env,
        &mut kb,
        &ExpKnowledgeBase::new(),
        &mut ScriptedOracle::new(&t),
        &retriever,
        &AgentConfig::default(),
        0,
    );
    assert!(matches!(err, Err(AgentError::InvalidBudget)));
}

#[test]
fn episodes_are_deterministic() {
    let f = Fixture::new();
    let exp = expert_exp_kb(&f.catalog, &[("boil", 2), ("boil", 3)]);
    let t = expert(&f.catalog, "boil", 0);
    let go = || {
        let mut dm = NoisyScripted::new(&t, 0.4, 9);
        let (r, kb) = f.run("boil", 0, &mut dm, &exp, &AgentConfig::default(), 40);
        (r, kb.to_vec(), dm.counts())
    };
    assert_eq!(go(), go());
}

#[test]
fn memory_records_every_step_and_replays_to_the_same_kb() {
    let f = Fixture::new();
    let exp = expert_exp_kb(&f.catalog, &[("conductivity", 4)]);
    let t = expert(&f.catalog, "conductivity", 2);
    let mut dm = NoisyScripted::new(&t, 0.5, 1);
    let (r, kb) = f.run("conductivity", 2, &mut dm, &exp, &AgentConfig::default(), 60);

    let taken: Vec<&MemoryEvent> = r.memory.actions().collect();
    assert_eq!(taken.len(), r.steps_used);
    let mut verdicts = 0;
    let mut env_retrievals = 0;
    let mut exp_retrievals = 0;
    for e in r.memory.events() {
        match e {
            MemoryEvent::VerdictMade { .. } => verdicts += 1,
            MemoryEvent::RetrievalMade { kind: RetrievalKind::Env, doc_ids, .. } => {
                env_retrievals += 1;
                assert!(!doc_ids.is_empty() && doc_ids.len() <= 5);
            }
            MemoryEvent::RetrievalMade { kind: RetrievalKind::Exp, .. } => exp_retrievals += 1,
            _ => {}
        }
    }
    assert_eq!(verdicts, r.steps_used);
    assert_eq!(env_retrievals, r.steps_used);
    assert_eq!(exp_retrievals, r.steps_used);
    let steps: Vec<usize> = r.memory.events().iter().map(MemoryEvent::step).collect();
    assert!(steps.windows(2).all(|w| w[0] <= w[1]));

    let replayed = r.memory.replay(f.catalog.registry().clone()).unwrap();
    assert_eq!(replayed.to_vec(), kb.to_vec());
}

#[test]
fn later_observations_supersede_earlier_ones() {
    let f = Fixture::new();
    let t = expert(&f.catalog, "boil", 0);
    let (r, kb) = f.run(
        "boil",
        0,
        &mut ScriptedOracle::new(&t),
        &ExpKnowledgeBase::new(),
        &AgentConfig::default(),
        100,
    );
    assert!(r.kb_deltas.superseded > 0);
    // Each (subject, relation) key holds the value from its latest observation.
    let mut latest = std::collections::BTreeMap::new();
    for e in r.memory.events() {
        let facts = match e {
            MemoryEvent::Observed { facts, .. } | MemoryEvent::ActionTaken { facts, .. } => facts,
            _ => continue,
        };
        for t in facts {
            latest.insert(t.key(), t.value.clone());
        }
    }
    assert_eq!(latest.len(), kb.len());
    for t in kb.triples() {
        assert_eq!(latest[&t.key()], t.value);
    }
}

#[test]
fn disabled_kb_makes_no_retrievals() {
    let f = Fixture::new();
    let exp = expert_exp_kb(&f.catalog, &[("pour", 1)]);
    let t = expert(&f.catalog, "pour", 0);
    let cfg = AgentConfig {
        use_kb: false,
        ..AgentConfig::default()
    };
    let (r, _) = f.run("pour", 0, &mut ScriptedOracle::new(&t), &exp, &cfg, 20);
    assert!(r
        .memory
        .events()
        .iter()
        .all(|e| !matches!(e, MemoryEvent::RetrievalMade { .. })));
    assert_eq!(r.score, 100.0);
}

#[test]
fn self_experience_appends_one_unit_per_segment() {
    let f = Fixture::new();
    let t = expert(&f.catalog, "pour", 0);
    let (r, _) = f.run(
        "pour",
        0,
        &mut ScriptedOracle::new(&t),
        &ExpKnowledgeBase::new(),
        &AgentConfig::default(),
        20,
    );
    let mut exp = expert_exp_kb(&f.catalog, &[("boil", 0)]);
    let before = exp.len();
    let ids = ingest_self_experience(&r, &mut exp, f.catalog.registry(), &DistillerBackend::RuleBased).unwrap();
    assert_eq!(ids.len(), 3);
    assert_eq!(exp.len(), before + 3);
    for id in ids {
        let u = exp.get(id).unwrap();
        assert_eq!(u.provenance, Provenance::SelfGenerated);
        assert_eq!(u.source_task_id, "pour:0");
    }
    assert_eq!(exp.get(before).unwrap().action_trajectory, vec!["take mug".to_string()]);
}

#[test]
fn zero_score_episode_adds_nothing() {
    let f = Fixture::new();
    let t = expert(&f.catalog, "boil", 0);
    let (r, _) = f.run(
        "boil",
        0,
        &mut ScriptedOracle::new(&t),
        &ExpKnowledgeBase::new(),
        &AgentConfig::default(),
        1,
    );
    assert_eq!(r.score, 0.0);
    let mut exp = ExpKnowledgeBase::new();
    let ids = ingest_self_experience(&r, &mut exp, f.catalog.registry(), &DistillerBackend::RuleBased).unwrap();
    assert!(ids.is_empty() && exp.is_empty());
}

#[test]
fn remote_model_drives_an_episode() {
    let f = Fixture::new();
    let backend = Canned::new([
        "STEP: get the mug\nSTEP: water the plant",
        "ACTION: take mug",
        "VERDICT: step_done\nRATIONALE: holding it",
        "ACTION: examine mug",
        "VERDICT: on_track",
        "ACTION: dance wildly",
        "VERDICT: deviated\nRATIONALE: nonsense",
        "STEP: water the plant",
        "ACTION: go to greenhouse",
        "VERDICT: on_track",
        "ACTION: pour mug into planter",
        "VERDICT: task_done",
    ]);
    let mut dm = RemoteChat::new(Arc::new(backend));
    let (r, _) = f.run("pour", 0, &mut dm, &ExpKnowledgeBase::new(), &AgentConfig::default(), 10);
    assert_eq!(r.score, 100.0);
    assert_eq!(r.steps_used, 5);
    let refused = r
        .memory
        .actions()
        .filter(|e| matches!(e, MemoryEvent::ActionTaken { accepted: false, .. }))
        .count();
    assert_eq!(refused, 1);
    let plans = r.memory.events().iter().filter(|e| matches!(e, MemoryEvent::PlanSet { .. })).count();
    assert_eq!(plans, 2);
}

#[test]
fn premature_task_done_is_not_trusted() {
    let f = Fixture::new();
    let backend = Canned::new(["STEP: go", "ACTION: take mug", "VERDICT: task_done", "ACTION: wait", "VERDICT: task_done"]);
    let mut dm = RemoteChat::new(Arc::new(backend));
    let (r, _) = f.run("pour", 0, &mut dm, &ExpKnowledgeBase::new(), &AgentConfig::default(), 2);
    assert_eq!(r.steps_used, 2);
    let statuses: Vec<VerdictStatus> = r
        .memory
        .events()
        .iter()
        .filter_map(|e| match e {
            MemoryEvent::VerdictMade { verdict, .. } => Some(verdict.status),
            _ => None,
        })
        .collect();
    assert_eq!(statuses, vec![VerdictStatus::OnTrack, VerdictStatus::OnTrack]);
}

#[test]
fn malformed_reply_stops_with_error() {
    let f = Fixture::new();
    let backend = Canned::new(["STEP: x", "I think you should take the mug"]);
    let mut dm = RemoteChat::new(Arc::new(backend));
    let (r, _) = f.run("pour", 0, &mut dm, &ExpKnowledgeBase::new(), &AgentConfig::default(), 5);
    assert_eq!(r.steps_used, 0);
    assert!(r.error.unwrap().contains("ACTION"));
}

#[test]
fn replay_cassette_rejects_unseen_requests() {
    let f = Fixture::new();
    let replay = Replay::new(vec![CassetteEntry {
        request: vec![dualkb::chat::ChatMessage::user("something else")],
        response: "STEP: x".into(),
    }]);
    let mut dm = RemoteChat::new(Arc::new(replay));
    let (r, _) = f.run("pour", 0, &mut dm, &ExpKnowledgeBase::new(), &AgentConfig::default(), 5);
    assert_eq!(r.steps_used, 0);
    assert!(r.error.is_some());
}

/// Minimal HTTP server: answers each connection with the next (status, body).
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for (stream, (status, body)) in listener.incoming().zip(replies) {
            let mut stream = stream.unwrap();
            counter.fetch_add(1, Ordering::SeqCst);
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line.trim().is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let resp = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (url, hits)
}

fn completion(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn http(url: String) -> HttpChat {
    let mut cfg = HttpChatConfig::new(url);
    cfg.backoff = Duration::from_millis(10);
    HttpChat::new(cfg)
}

#[test]
fn http_backend_retries_transient_failures() {
    use dualkb::chat::{ChatBackend, ChatMessage};
    let (url, hits) = serve(vec![
        (503, "busy".into()),
        (429, "slow down".into()),
        (200, completion("ACTION: wait")),
    ]);
    let out = http(url).complete(&[ChatMessage::user("hi")]).unwrap();
    assert_eq!(out, "ACTION: wait");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn http_backend_gives_up_after_retries_and_on_client_errors() {
    use dualkb::chat::{ChatBackend, ChatMessage};
    let (url, hits) = serve(vec![(500, "a".into()), (500, "b".into()), (500, "c".into()), (200, completion("x"))]);
    let err = http(url).complete(&[ChatMessage::user("hi")]).unwrap_err();
    assert!(matches!(err, ChatError::Status { status: 500, .. }));
    assert_eq!(hits.load(Ordering::SeqCst), 3);

    let (url, hits) = serve(vec![(400, "bad".into()), (200, completion("x"))]);
    let err = http(url).complete(&[ChatMessage::user("hi")]).unwrap_err();
    assert!(matches!(err, ChatError::Status { status: 400, .. }));
    assert_eq!(hits.load(Ordering::SeqCst), 1);

    let (url, _) = serve(vec![(200, "{\"choices\": []}".into())]);
    assert!(matches!(http(url).complete(&[ChatMessage::user("hi")]), Err(ChatError::Malformed(_))));
}
