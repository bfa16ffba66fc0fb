use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context};
use dualkb::agent::{
    ingest_self_experience, run_episode, DecisionModel, MicroworldEnv, NoisyScripted, RemoteChat, Retriever,
    ScriptedOracle,
};
use dualkb::chat::{ChatBackend, HttpChat, HttpChatConfig, Recorder, Replay};
use dualkb::dataset::{
    build_env_dataset, build_exp_dataset, collect_env_knowledge, DatasetFile, DatasetKind, DatasetManifest,
    ExpDatasetConfig, Trajectory,
};
use dualkb::distill::{distill_trajectory, DistillerBackend};
use dualkb::embedder::{train, EvalQuery, TrainingInstance};
use dualkb::experiment::{ablation, distill_experts, grouped_recall, instance_eval_groups, EvalGroup};
use dualkb::kb::{EnvKnowledgeBase, KnowledgeBases, Provenance, Triple};
use dualkb::microworld::Catalog;
use dualkb::retrieval::{Document, TokenF1};
use dualkb::Model;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::*;
use crate::output::{flatten, write_json, Report};

fn ids(instances: &[(String, u32)]) -> Vec<String> {
    instances.iter().map(|(t, v)| format!("{t}:{v}")).collect()
}

fn load_model(src: &ModelSource) -> anyhow::Result<Model> {
    match &src.model {
        Some(p) => Model::load(p).with_context(|| format!("loading model {}", p.display())),
        None => Ok(Model::new(src.model_seed)),
    }
}

fn chat_backend(remote: &RemoteConfig) -> anyhow::Result<Arc<dyn ChatBackend>> {
    let live = || -> anyhow::Result<HttpChat> { Ok(HttpChat::new(HttpChatConfig::from_env()?)) };
    Ok(match (remote.cassette_mode, &remote.cassette) {
        (CassetteMode::Off, _) => Arc::new(live()?),
        (CassetteMode::Record, Some(p)) => Arc::new(Recorder::new(live()?, p.clone())),
        (CassetteMode::Replay, Some(p)) => Arc::new(Replay::open(p)?),
        (_, None) => bail!("cassette mode needs a cassette path"),
    })
}

/// Appends `triples` as newer than everything already in `store` by shifting
/// their steps past the store's latest one.
fn append_shifted<'a>(store: &mut EnvKnowledgeBase, triples: impl IntoIterator<Item = &'a Triple>) -> anyhow::Result<usize> {
    let offset = store.triples().map(|t| t.step_index + 1).max().unwrap_or(0);
    let mut n = 0;
    for t in triples {
        let mut t = t.clone();
        t.step_index += offset;
        store.upsert(t)?;
        n += 1;
    }
    Ok(n)
}

pub fn kb_build(catalog: &Catalog, cfg: &KbBuildConfig, instances: &[(String, u32)]) -> anyhow::Result<Value> {
    let mut env = EnvKnowledgeBase::new(catalog.registry().clone());
    let distilled = distill_experts(catalog, instances).context("replaying expert trajectories")?;
    for d in &distilled {
        append_shifted(&mut env, &d.snapshot.final_state)?;
    }
    let exp = dualkb::experiment::expert_exp_kb(&distilled)?;
    let kbs = KnowledgeBases::new(env, exp);
    kbs.save(&cfg.out).with_context(|| format!("writing {}", cfg.out.display()))?;
    Ok(json!({
        "sources": ids(instances),
        "env_triples": kbs.env.len(),
        "exp_units": kbs.exp.len(),
    }))
}

pub fn distill(catalog: &Catalog, cfg: &DistillConfig, instances: &[(String, u32)]) -> anyhow::Result<Value> {
    let backend = match cfg.backend {
        DistillBackendKind::Rule => DistillerBackend::RuleBased,
        DistillBackendKind::Remote => DistillerBackend::ModelBacked(chat_backend(&cfg.remote)?),
    };
    let mut kbs = match &cfg.kb {
        Some(p) => KnowledgeBases::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => KnowledgeBases::new(EnvKnowledgeBase::new(catalog.registry().clone()), Default::default()),
    };
    let before = kbs.exp.len();
    let mut per_task = BTreeMap::new();
    for (task, v) in instances {
        let mut t = catalog.expert_trajectory(task, *v)?;
        let snap = collect_env_knowledge(catalog, &t)?;
        distill_trajectory(&mut t, &snap, Provenance::Expert, &backend)
            .with_context(|| format!("distilling {task}:{v}"))?;
        for sg in t.subgoals {
            kbs.exp.store(sg.exp_unit.context("distiller left a sub-goal without a unit")?)?;
        }
        *per_task.entry(task.clone()).or_insert(0usize) += 1;
    }
    kbs.save(&cfg.out).with_context(|| format!("writing {}", cfg.out.display()))?;
    Ok(json!({
        "sources": ids(instances),
        "units_added": kbs.exp.len() - before,
        "exp_units": kbs.exp.len(),
        "trajectories_per_task": per_task,
    }))
}

pub fn dataset_env(catalog: &Catalog, cfg: &DatasetEnvConfig, instances: &[(String, u32)]) -> anyhow::Result<Value> {
    let mut all = Vec::new();
    let mut per_source = BTreeMap::new();
    for (i, (task, v)) in instances.iter().enumerate() {
        let t = catalog.expert_trajectory(task, *v)?;
        let snap = collect_env_knowledge(catalog, &t)?;
        let inst = build_env_dataset(&snap, &t, cfg.m, cfg.seed.wrapping_add(i as u64))?;
        per_source.insert(t.instance_id(), inst.len());
        all.extend(inst);
    }
    let file = DatasetFile::new(DatasetManifest::new(DatasetKind::Env, cfg.seed, cfg.m, None, ids(instances)), all);
    file.save(&cfg.out)?;
    Ok(json!({ "instances": file.instances.len(), "per_source": per_source }))
}

pub fn dataset_exp(catalog: &Catalog, cfg: &DatasetExpConfig, instances: &[(String, u32)]) -> anyhow::Result<Value> {
    let encoder = load_model(&cfg.encoder)?;
    let distilled = distill_experts(catalog, instances)?;
    let trajs: Vec<Trajectory> = distilled.into_iter().map(|d| d.trajectory).collect();
    let exp_cfg = ExpDatasetConfig {
        theta: cfg.theta,
        m: cfg.m,
        seed: cfg.seed,
        joint_knowledge: cfg.joint_knowledge,
    };
    let ds = build_exp_dataset(&trajs, &encoder, &exp_cfg)?;
    let file = DatasetFile::new(
        DatasetManifest::new(DatasetKind::Exp, cfg.seed, cfg.m, Some(cfg.theta), ids(instances)),
        ds.instances,
    );
    file.save(&cfg.out)?;
    Ok(json!({
        "instances": file.instances.len(),
        "pairs": ds.pairs.len(),
        "skipped": ds.skipped,
    }))
}

fn load_instances(paths: &[std::path::PathBuf]) -> anyhow::Result<Vec<TrainingInstance>> {
    let mut out = Vec::new();
    for p in paths {
        let f = DatasetFile::load(p).with_context(|| format!("loading {}", p.display()))?;
        out.extend(f.instances);
    }
    Ok(out)
}

pub fn train_cmd(cfg: &TrainCmdConfig) -> anyhow::Result<Value> {
    if cfg.data.is_empty() {
        bail!("no dataset files given");
    }
    let data = load_instances(&cfg.data)?;
    let init = load_model(&cfg.init)?;
    let (model, report) = train(&init, &data, &cfg.train)?;
    model.save(&cfg.out).with_context(|| format!("writing {}", cfg.out.display()))?;
    Ok(json!({
        "instances": data.len(),
        "epoch_losses": report.epoch_losses,
        "first_loss": report.epoch_losses.first(),
        "final_loss": report.epoch_losses.last(),
    }))
}

#[derive(Deserialize)]
struct CorpusLine {
    id: u64,
    text: String,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

pub fn eval_retrieval(cfg: &EvalRetrievalConfig) -> anyhow::Result<Value> {
    let encoder = load_model(&cfg.encoder)?;
    let groups = match (&cfg.data, &cfg.corpus, &cfg.queries) {
        (Some(data), None, None) => instance_eval_groups(&load_instances(std::slice::from_ref(data))?),
        (None, Some(c), Some(q)) => {
            let corpus = read_jsonl::<CorpusLine>(c)?
                .into_iter()
                .map(|l| Document::text(l.id, l.text))
                .collect();
            vec![EvalGroup {
                queries: read_jsonl::<EvalQuery>(q)?,
                corpus,
            }]
        }
        _ => bail!("give either a dataset file, or a corpus together with queries"),
    };
    let r = grouped_recall(&encoder, &groups, cfg.k)?;
    Ok(json!({
        "k": cfg.k,
        "recall": r.value,
        "hits": r.hits,
        "queries": r.total,
        "warnings": r.warnings,
    }))
}

pub fn episode(catalog: &Catalog, cfg: &EpisodeConfig) -> anyhow::Result<Value> {
    let expert = catalog.expert_trajectory(&cfg.task, cfg.variation)?;
    let budget = cfg
        .budget
        .unwrap_or_else(|| (expert.len() as f64 * cfg.budget_slack).ceil() as usize);
    let mut kbs = match &cfg.kb {
        Some(p) => KnowledgeBases::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => KnowledgeBases::new(EnvKnowledgeBase::new(catalog.registry().clone()), Default::default()),
    };
    let encoder = load_model(&cfg.encoder)?;
    let retriever = Retriever {
        encoder: &encoder,
        scorer: &TokenF1,
    };
    let mut dm: Box<dyn DecisionModel> = match cfg.decision {
        DecisionKind::Oracle => Box::new(ScriptedOracle::new(&expert)),
        DecisionKind::Noisy => Box::new(NoisyScripted::new(&expert, cfg.p, cfg.seed)),
        DecisionKind::Remote => Box::new(RemoteChat::new(chat_backend(&cfg.remote)?)),
    };
    let mut env = MicroworldEnv::new(catalog, &cfg.task, cfg.variation)?;
    // Stored environmental facts describe other worlds; the episode observes its own.
    let mut env_kb = EnvKnowledgeBase::new(catalog.registry().clone());
    let r = run_episode(&mut env, &mut env_kb, &kbs.exp, dm.as_mut(), &retriever, &cfg.agent, budget)?;
    let learned = if cfg.learn {
        ingest_self_experience(&r, &mut kbs.exp, catalog.registry(), &DistillerBackend::RuleBased)?.len()
    } else {
        0
    };
    if let Some(p) = &cfg.kb_out {
        append_shifted(&mut kbs.env, env_kb.triples())?;
        kbs.save(p).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &cfg.trajectory_out {
        write_json(p, &r.trajectory)?;
    }
    Ok(json!({
        "task": r.task,
        "score": r.score,
        "completed": r.completed,
        "steps_used": r.steps_used,
        "budget": r.budget,
        "memory_events": r.memory.len(),
        "kb_deltas": r.kb_deltas,
        "env_facts": env_kb.len(),
        "units_learned": learned,
        "error": r.error,
        "actions": r.trajectory.steps().map(|s| s.action.clone()).collect::<Vec<_>>(),
    }))
}

pub fn ablate(catalog: &Catalog, cfg: &AblateConfig) -> anyhow::Result<Value> {
    let r = ablation(catalog, cfg)?;
    Ok(serde_json::to_value(r)?)
}

/// Combined report over earlier runs, plus a text table on stdout.
pub fn report(cfg: &ReportConfig) -> anyhow::Result<(Value, String)> {
    if cfg.inputs.is_empty() {
        bail!("no input reports given");
    }
    let mut runs = Vec::new();
    let mut table = String::new();
    for p in &cfg.inputs {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let r: Report = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        if r.schema != crate::output::REPORT_SCHEMA {
            bail!("{} is not a run report", p.display());
        }
        let mut rows = Vec::new();
        flatten("", &r.metrics, &mut rows);
        table.push_str(&format!("== {} ({})\n", r.command, p.display()));
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in rows.iter().filter(|(k, _)| !k.contains("episodes[") && !k.starts_with("actions")) {
            table.push_str(&format!("{k:<width$}  {v}\n"));
        }
        runs.push(json!({ "source": p, "command": r.command, "metrics": r.metrics }));
    }
    Ok((json!({ "runs": runs }), table))
}
