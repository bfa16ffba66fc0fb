use serde::{Deserialize, Serialize};

use super::{
    AgentError, DecisionContext, DecisionModel, Environment, MemoryEvent, MemoryLog, Plan, RetrievalKind,
    VerdictStatus,
};
use crate::dataset::{StepRecord, SubGoal, Trajectory};
use crate::distill::{decompose, extract_unit, DistillerBackend, UnitOrigin};
use crate::embedder::TextEncoder;
use crate::kb::{EnvKnowledgeBase, ExpKnowledgeBase, IngestStats, Provenance, SubGoalUnit};
use crate::retrieval::{env_corpus, exp_corpus, retrieve, CrossScorer, Document, IndexedCorpus, QueryBundle, RetrievalConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub retrieval: RetrievalConfig,
    /// Retrieve from the knowledge bases at all.
    pub use_kb: bool,
    /// Feed environmental results into the experiential query.
    pub joint_knowledge: bool,
    /// Number of most recent memory events shown to the decision model.
    pub memory_window: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            retrieval: RetrievalConfig::default(),
            use_kb: true,
            joint_knowledge: true,
            memory_window: 20,
        }
    }
}

/// Encoder and cross-scorer used for both stores.
pub struct Retriever<'a, T: Scalar> {
    pub encoder: &'a dyn TextEncoder<T>,
    pub scorer: &'a dyn CrossScorer<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub task: String,
    pub score: f64,
    pub steps_used: usize,
    pub budget: usize,
    pub completed: bool,
    pub memory: MemoryLog,
    /// Every taken step, as a single sub-goal named after the goal.
    pub trajectory: Trajectory,
    pub kb_deltas: IngestStats,
    /// Set when the decision model failed and the episode stopped early.
    pub error: Option<String>,
}

fn split_instance(id: &str) -> (String, u32) {
    match id.rsplit_once(':') {
        Some((task, v)) => (task.to_string(), v.parse().unwrap_or(0)),
        None => (id.to_string(), 0),
    }
}

/// Runs one episode: retrieve, act, ingest, evaluate, until the task is done
/// or `budget` environment steps have been used.
#[allow(clippy::too_many_arguments)]
pub fn run_episode<T: Scalar, E: Environment + ?Sized, D: DecisionModel + ?Sized>(
    env: &mut E,
    env_kb: &mut EnvKnowledgeBase,
    exp_kb: &ExpKnowledgeBase,
    dm: &mut D,
    retriever: &Retriever<T>,
    cfg: &AgentConfig,
    budget: usize,
) -> Result<EpisodeResult, AgentError> {
    if budget == 0 {
        return Err(AgentError::InvalidBudget);
    }
    cfg.retrieval.validate()?;
    let goal = env.goal().to_string();
    let mut memory = MemoryLog::new();
    let mut deltas = IngestStats::default();
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut error = None;

    let initial = env.initial().clone();
    deltas.merge(env_kb.ingest_facts(&initial.facts, 0)?);
    memory.push(MemoryEvent::Observed {
        step: 0,
        observation: initial.observation.clone(),
        facts: initial.facts.clone(),
        clock: 0,
    });

    let exp_index = (cfg.use_kb && !exp_kb.is_empty())
        .then(|| IndexedCorpus::build(exp_corpus(exp_kb), retriever.encoder));

    let mut filler = env.filler_actions();
    let mut plan: Option<Plan> = None;
    let mut env_docs: Vec<Document> = Vec::new();
    let mut units: Vec<SubGoalUnit> = Vec::new();

    macro_rules! ctx {
        ($steps_used:expr) => {
            DecisionContext {
                goal: &goal,
                plan: plan.as_ref(),
                memory: memory.window(cfg.memory_window),
                env_docs: &env_docs,
                exp_units: &units,
                filler: &filler,
                steps_used: $steps_used,
            }
        };
    }

    match dm.propose_plan(&ctx!(0)) {
        Ok(p) => {
            memory.push(MemoryEvent::PlanSet { step: 0, plan: p.clone() });
            plan = Some(p);
        }
        Err(e) => error = Some(e.to_string()),
    }

    let mut steps_used = 0;
    while error.is_none() && steps_used < budget && !env.is_complete() {
        let plan_text = plan.as_ref().map_or("", Plan::current).to_string();
        env_docs.clear();
        units.clear();
        if cfg.use_kb {
            if !env_kb.is_empty() {
                let index = IndexedCorpus::build(env_corpus(env_kb), retriever.encoder);
                let bundle = QueryBundle::new(goal.clone(), plan_text.clone());
                let out = retrieve(&index, &bundle, retriever.encoder, retriever.scorer, &cfg.retrieval)?;
                memory.push(MemoryEvent::RetrievalMade {
                    step: steps_used,
                    kind: RetrievalKind::Env,
                    query: bundle.query_text(),
                    doc_ids: out.docs.iter().map(|d| d.doc.id).collect(),
                });
                env_docs = out.docs.into_iter().map(|d| d.doc).collect();
            }
            if let Some(index) = &exp_index {
                let mut bundle = QueryBundle::new(goal.clone(), plan_text.clone());
                if cfg.joint_knowledge {
                    bundle = bundle.with_env_context(env_docs.clone());
                }
                let out = retrieve(index, &bundle, retriever.encoder, retriever.scorer, &cfg.retrieval)?;
                memory.push(MemoryEvent::RetrievalMade {
                    step: steps_used,
                    kind: RetrievalKind::Exp,
                    query: bundle.query_text(),
                    doc_ids: out.docs.iter().map(|d| d.doc.id).collect(),
                });
                units = out
                    .docs
                    .iter()
                    .filter_map(|d| d.doc.unit_id().and_then(|id| exp_kb.get(id)).cloned())
                    .collect();
            }
        }

        let action = match dm.propose_action(&ctx!(steps_used)) {
            Ok(a) => a,
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        };
        let result = env.step(&action)?;
        steps_used += 1;
        let clock = env.clock();
        deltas.merge(env_kb.ingest_facts(&result.facts, clock)?);
        memory.push(MemoryEvent::ActionTaken {
            step: steps_used,
            action: action.clone(),
            observation: result.observation.clone(),
            facts: result.facts.clone(),
            clock,
            accepted: result.accepted,
            milestone_hits: result.milestone_hits.clone(),
        });
        steps.push(StepRecord {
            action,
            observation: result.observation.clone(),
            milestone_hits: result.milestone_hits.clone(),
        });
        filler = env.filler_actions();

        let mut verdict = match dm.evaluate(&ctx!(steps_used), &result) {
            Ok(v) => v,
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        };
        if verdict.status == VerdictStatus::TaskDone && !result.terminal {
            verdict.status = VerdictStatus::OnTrack;
            verdict.rationale = format!("{} (the world has not reported completion)", verdict.rationale);
        }
        memory.push(MemoryEvent::VerdictMade {
            step: steps_used,
            verdict: verdict.clone(),
        });
        match verdict.status {
            VerdictStatus::StepDone => {
                if let Some(p) = plan.as_mut() {
                    p.advance();
                }
            }
            VerdictStatus::Deviated => match dm.propose_plan(&ctx!(steps_used)) {
                Ok(p) => {
                    memory.push(MemoryEvent::PlanSet {
                        step: steps_used,
                        plan: p.clone(),
                    });
                    plan = Some(p);
                }
                Err(e) => error = Some(e.to_string()),
            },
            VerdictStatus::TaskDone | VerdictStatus::OnTrack => {}
        }
    }

    let instance = env.instance_id();
    let (task_id, variation) = split_instance(&instance);
    let subgoals = if steps.is_empty() {
        Vec::new()
    } else {
        vec![SubGoal::new(goal.clone(), steps)]
    };
    Ok(EpisodeResult {
        task: instance,
        score: env.score(),
        steps_used,
        budget,
        completed: env.is_complete(),
        memory,
        trajectory: Trajectory {
            task_id,
            variation,
            goal,
            subgoals,
        },
        kb_deltas: deltas,
        error,
    })
}

/// Decomposes and distills an episode into self-generated units appended to
/// `exp_kb`. Episodes that scored nothing are skipped. Returns the new unit ids.
pub fn ingest_self_experience(
    result: &EpisodeResult,
    exp_kb: &mut ExpKnowledgeBase,
    registry: &crate::kb::RelationRegistry,
    backend: &DistillerBackend,
) -> Result<Vec<usize>, AgentError> {
    if result.score <= 0.0 {
        log::info!("{}: score 0, nothing to learn from", result.task);
        return Ok(Vec::new());
    }
    let raw: Vec<StepRecord> = result.trajectory.steps().cloned().collect();
    let segments = decompose(&raw, backend)?;
    let origin = UnitOrigin {
        source_task_id: result.task.clone(),
        provenance: Provenance::SelfGenerated,
    };
    let mut units = Vec::with_capacity(segments.len());
    let mut offset = 0;
    for sg in &segments {
        let mut kb = EnvKnowledgeBase::new(registry.clone());
        result.memory.replay_into(&mut kb, Some(offset))?;
        units.push(extract_unit(sg, &kb.to_vec(), &origin, backend)?);
        offset += sg.actions.len();
    }
    let mut ids = Vec::with_capacity(units.len());
    for u in units {
        ids.push(exp_kb.store(u)?);
    }
    Ok(ids)
}
