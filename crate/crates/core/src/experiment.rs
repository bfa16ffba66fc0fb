//! End-to-end runners shared by the command line and the acceptance suite:
//! the training-effect measurement and the knowledge ablation grid.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_episode, AgentConfig, AgentError, MicroworldEnv, NoisyScripted, Retriever};
use crate::dataset::{
    build_env_dataset, build_exp_dataset, collect_env_knowledge, env_query, interacted_objects, is_related,
    DatasetError, EnvSnapshot, ExpDatasetConfig, Trajectory,
};
use crate::distill::{distill_trajectory, DistillError, DistillerBackend};
use crate::embedder::{recall_at_k, Recall, TextEncoder, train, EmbedError, EmbeddingModel, EvalQuery, TrainConfig, TrainingInstance};
use crate::kb::{EnvKnowledgeBase, ExpKnowledgeBase, KbError, Provenance, Triple};
use crate::microworld::{Catalog, WorldError};
use crate::retrieval::{Document, RetrievalConfig, TokenF1};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

/// Which task instances feed training and which are held out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub families: Vec<String>,
    /// Variations below this index train; the rest are held out.
    pub train_variations: u32,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            families: ["boil", "conductivity", "find", "pour"].map(String::from).to_vec(),
            train_variations: 8,
        }
    }
}

impl SplitConfig {
    fn instances(&self, catalog: &Catalog, train: bool) -> Result<Vec<(String, u32)>, ExperimentError> {
        if self.families.is_empty() {
            return Err(ExperimentError::InvalidConfig("no task families".into()));
        }
        let mut out = Vec::new();
        for f in &self.families {
            let n = catalog.variation_count(f)? as u32;
            if self.train_variations == 0 || self.train_variations >= n {
                return Err(ExperimentError::InvalidConfig(format!(
                    "train_variations must leave both sides non-empty for {f} ({n} variations)"
                )));
            }
            let range = if train { 0..self.train_variations } else { self.train_variations..n };
            out.extend(range.map(|v| (f.clone(), v)));
        }
        Ok(out)
    }

    pub fn train_instances(&self, catalog: &Catalog) -> Result<Vec<(String, u32)>, ExperimentError> {
        self.instances(catalog, true)
    }

    pub fn heldout_instances(&self, catalog: &Catalog) -> Result<Vec<(String, u32)>, ExperimentError> {
        self.instances(catalog, false)
    }
}

/// Expert trajectory with its replay snapshot and distilled units.
#[derive(Debug, Clone)]
pub struct Distilled {
    pub trajectory: Trajectory,
    pub snapshot: EnvSnapshot,
}

pub fn distill_experts(catalog: &Catalog, ids: &[(String, u32)]) -> Result<Vec<Distilled>, ExperimentError> {
    ids.iter()
        .map(|(task, v)| {
            let mut trajectory = catalog.expert_trajectory(task, *v)?;
            let snapshot = collect_env_knowledge(catalog, &trajectory)?;
            distill_trajectory(&mut trajectory, &snapshot, Provenance::Expert, &DistillerBackend::RuleBased)?;
            Ok(Distilled { trajectory, snapshot })
        })
        .collect()
}

/// Experiential store seeded with every distilled unit, in input order.
pub fn expert_exp_kb(distilled: &[Distilled]) -> Result<ExpKnowledgeBase, ExperimentError> {
    let mut kb = ExpKnowledgeBase::new();
    for d in distilled {
        for (i, sg) in d.trajectory.subgoals.iter().enumerate() {
            let unit = sg.exp_unit.clone().ok_or(DatasetError::MissingExpUnit(i))?;
            kb.store(unit)?;
        }
    }
    Ok(kb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSizes {
    pub env: usize,
    pub exp: usize,
    pub exp_pairs: usize,
}

/// D_env over every trajectory plus D_exp over all of them jointly.
pub fn build_training_set(
    distilled: &[Distilled],
    encoder: &EmbeddingModel<f64>,
    exp_cfg: &ExpDatasetConfig,
) -> Result<(Vec<TrainingInstance>, DatasetSizes), ExperimentError> {
    let mut out = Vec::new();
    for (i, d) in distilled.iter().enumerate() {
        out.extend(build_env_dataset(&d.snapshot, &d.trajectory, exp_cfg.m, exp_cfg.seed.wrapping_add(i as u64))?);
    }
    let env = out.len();
    let trajs: Vec<Trajectory> = distilled.iter().map(|d| d.trajectory.clone()).collect();
    let exp = build_exp_dataset(&trajs, encoder, exp_cfg)?;
    let sizes = DatasetSizes {
        env,
        exp: exp.instances.len(),
        exp_pairs: exp.pairs.len(),
    };
    out.extend(exp.instances);
    Ok((out, sizes))
}

/// One retrieval problem: queries against the corpus they are ranked in.
#[derive(Debug, Clone)]
pub struct EvalGroup {
    pub queries: Vec<EvalQuery>,
    pub corpus: Vec<Document>,
}

/// Each instance ranks its positive (id 0) among its own negatives.
pub fn instance_eval_groups(instances: &[TrainingInstance]) -> Vec<EvalGroup> {
    instances
        .iter()
        .map(|inst| {
            let mut corpus = vec![Document::text(0, &inst.positive)];
            corpus.extend(
                inst.negatives
                    .iter()
                    .enumerate()
                    .map(|(i, n)| Document::text(i as u64 + 1, n)),
            );
            EvalGroup {
                queries: vec![EvalQuery {
                    query: inst.query.clone(),
                    relevant: vec![0],
                }],
                corpus,
            }
        })
        .collect()
}

/// Env queries of all trajectories against one corpus of every distinct
/// triple across their snapshots. Relevant = the sub-goal's related triples.
pub fn pooled_env_eval(distilled: &[Distilled]) -> EvalGroup {
    let mut by_text: BTreeMap<String, Triple> = BTreeMap::new();
    for d in distilled {
        for t in d.snapshot.per_subgoal.iter().flatten() {
            by_text.entry(t.render()).or_insert_with(|| t.clone());
        }
    }
    let corpus: Vec<Document> = by_text
        .values()
        .enumerate()
        .map(|(i, t)| Document::from_triple(i as u64, t))
        .collect();
    let ids: BTreeMap<&str, u64> = corpus.iter().map(|d| (d.text.as_str(), d.id)).collect();
    let mut queries = Vec::new();
    for d in distilled {
        for (sg, snap) in d.trajectory.subgoals.iter().zip(&d.snapshot.per_subgoal) {
            let objects = interacted_objects(sg);
            let relevant: BTreeSet<u64> = snap
                .iter()
                .filter(|t| is_related(t, &objects))
                .map(|t| ids[t.render().as_str()])
                .collect();
            if !relevant.is_empty() {
                queries.push(EvalQuery {
                    query: env_query(&d.trajectory.goal, &sg.name),
                    relevant: relevant.into_iter().collect(),
                });
            }
        }
    }
    EvalGroup { queries, corpus }
}

/// Hit rate pooled over groups.
pub fn grouped_recall<E: TextEncoder<f64> + ?Sized>(
    encoder: &E,
    groups: &[EvalGroup],
    k: usize,
) -> Result<Recall, EmbedError> {
    let mut hits = 0;
    let mut total = 0;
    let mut warnings = Vec::new();
    for g in groups {
        let r = recall_at_k(encoder, &g.queries, &g.corpus, k)?;
        hits += r.hits;
        total += r.total;
        warnings.extend(r.warnings);
    }
    let value = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
    Ok(Recall {
        value,
        hits,
        total,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingEffectConfig {
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub exp: ExpDatasetConfig,
    pub model_seed: u64,
    pub k: usize,
}

impl Default for TrainingEffectConfig {
    fn default() -> Self {
        Self {
            split: SplitConfig::default(),
            train: TrainConfig::default(),
            exp: ExpDatasetConfig::default(),
            model_seed: 0,
            k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingEffectReport {
    pub sizes: DatasetSizes,
    /// Held-out instances built from the held-out variations.
    pub eval_queries: usize,
    pub untuned_recall: f64,
    pub tuned_recall: f64,
    /// Diagnostic: held-out env queries against one corpus pooling every
    /// held-out snapshot, across families.
    pub pooled_untuned_recall: f64,
    pub pooled_tuned_recall: f64,
    pub epoch_losses: Vec<f64>,
}

/// Trains from a fresh seeded model and compares Recall@k before and after
/// on instances built from the held-out variations, each ranking its
/// positive among its own negatives. Returns the tuned model alongside the report.
pub fn training_effect(
    catalog: &Catalog,
    cfg: &TrainingEffectConfig,
) -> Result<(EmbeddingModel<f64>, TrainingEffectReport), ExperimentError> {
    let train_set = distill_experts(catalog, &cfg.split.train_instances(catalog)?)?;
    let heldout = distill_experts(catalog, &cfg.split.heldout_instances(catalog)?)?;
    let untuned = EmbeddingModel::<f64>::new(cfg.model_seed);
    let exp_cfg = ExpDatasetConfig { m: cfg.train.m, ..cfg.exp };
    let (data, sizes) = build_training_set(&train_set, &untuned, &exp_cfg)?;
    let (tuned, report) = train(&untuned, &data, &cfg.train)?;
    let (heldout_data, _) = build_training_set(&heldout, &untuned, &exp_cfg)?;
    let groups = instance_eval_groups(&heldout_data);
    let before = grouped_recall(&untuned, &groups, cfg.k)?;
    let after = grouped_recall(&tuned, &groups, cfg.k)?;
    let pooled = [pooled_env_eval(&heldout)];
    let pooled_before = grouped_recall(&untuned, &pooled, cfg.k)?;
    let pooled_after = grouped_recall(&tuned, &pooled, cfg.k)?;
    Ok((
        tuned,
        TrainingEffectReport {
            sizes,
            eval_queries: before.total,
            untuned_recall: before.value,
            tuned_recall: after.value,
            pooled_untuned_recall: pooled_before.value,
            pooled_tuned_recall: pooled_after.value,
            epoch_losses: report.epoch_losses,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    NoKb,
    KbUntuned,
    KbTuned,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::NoKb, Condition::KbUntuned, Condition::KbTuned];

    pub fn name(self) -> &'static str {
        match self {
            Condition::NoKb => "no-kb",
            Condition::KbUntuned => "kb-untuned",
            Condition::KbTuned => "kb-tuned",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub training: TrainingEffectConfig,
    pub episodes: usize,
    /// Per-step confusion probability of the noisy scripted model.
    pub p: f64,
    pub seed: u64,
    /// Budget is the expert length times this, rounded up.
    pub budget_slack: f64,
    pub retrieval: RetrievalConfig,
    pub joint_knowledge: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            training: TrainingEffectConfig::default(),
            episodes: 20,
            p: 0.3,
            seed: 0,
            budget_slack: 1.25,
            retrieval: RetrievalConfig {
                k_candidates: 8,
                ..RetrievalConfig::default()
            },
            joint_knowledge: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub task: String,
    pub seed: u64,
    pub score: f64,
    pub steps_used: usize,
    pub budget: usize,
    pub recoveries: usize,
    pub slips: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub mean: f64,
    pub stddev: f64,
    pub episodes: Vec<EpisodeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub training: TrainingEffectReport,
    pub exp_units: usize,
    pub conditions: Vec<ConditionReport>,
    pub untuned_ge_no_kb: bool,
    pub tuned_ge_untuned: bool,
    pub tuned_gt_untuned: bool,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs `episodes` seeded episodes over the held-out instances for one
/// condition. Episode `i` plays held-out instance `i mod n` with seed `seed + i`.
pub fn run_condition(
    catalog: &Catalog,
    cfg: &AblationConfig,
    condition: Condition,
    exp_kb: &ExpKnowledgeBase,
    model: &EmbeddingModel<f64>,
) -> Result<ConditionReport, ExperimentError> {
    let heldout = cfg.training.split.heldout_instances(catalog)?;
    let agent_cfg = AgentConfig {
        retrieval: cfg.retrieval.clone(),
        use_kb: condition != Condition::NoKb,
        joint_knowledge: cfg.joint_knowledge,
        ..AgentConfig::default()
    };
    let retriever = Retriever {
        encoder: model,
        scorer: &TokenF1,
    };
    let mut episodes = Vec::with_capacity(cfg.episodes);
    for i in 0..cfg.episodes {
        let (task, v) = &heldout[i % heldout.len()];
        let expert = catalog.expert_trajectory(task, *v)?;
        let budget = (expert.len() as f64 * cfg.budget_slack).ceil() as usize;
        let seed = cfg.seed.wrapping_add(i as u64);
        let mut dm = NoisyScripted::new(&expert, cfg.p, seed);
        let mut env = MicroworldEnv::new(catalog, task, *v)?;
        let mut env_kb = EnvKnowledgeBase::new(catalog.registry().clone());
        let r = run_episode(&mut env, &mut env_kb, exp_kb, &mut dm, &retriever, &agent_cfg, budget.max(1))?;
        let (recoveries, slips) = dm.counts();
        episodes.push(EpisodeSummary {
            task: r.task,
            seed,
            score: r.score,
            steps_used: r.steps_used,
            budget: r.budget,
            recoveries,
            slips,
        });
    }
    let scores: Vec<f64> = episodes.iter().map(|e| e.score).collect();
    let (mean, stddev) = mean_std(&scores);
    Ok(ConditionReport {
        condition,
        mean,
        stddev,
        episodes,
    })
}

/// Trains the embedder, seeds the experiential store from the training
/// split's expert trajectories, and plays every condition.
pub fn ablation(catalog: &Catalog, cfg: &AblationConfig) -> Result<AblationReport, ExperimentError> {
    if cfg.episodes == 0 || !(0.0..=1.0).contains(&cfg.p) || !(cfg.budget_slack >= 1.0) {
        return Err(ExperimentError::InvalidConfig(
            "need episodes > 0, p in [0, 1] and budget_slack >= 1".into(),
        ));
    }
    let (tuned, training) = training_effect(catalog, &cfg.training)?;
    let untuned = EmbeddingModel::<f64>::new(cfg.training.model_seed);
    let exp_kb = expert_exp_kb(&distill_experts(catalog, &cfg.training.split.train_instances(catalog)?)?)?;
    let mut conditions = Vec::new();
    for c in Condition::ALL {
        let model = if c == Condition::KbTuned { &tuned } else { &untuned };
        conditions.push(run_condition(catalog, cfg, c, &exp_kb, model)?);
    }
    let [none, plain, full] = [0, 1, 2].map(|i| conditions[i].mean);
    Ok(AblationReport {
        training,
        exp_units: exp_kb.len(),
        conditions,
        untuned_ge_no_kb: plain >= none,
        tuned_ge_untuned: full >= plain,
        tuned_gt_untuned: full > plain,
    })
}
