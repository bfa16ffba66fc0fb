//! `dualkb` command line. Exit codes: 0 success, 1 usage error, 2 stage failure.

mod commands;
mod config;
mod output;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualkb::microworld::Catalog;
use serde::Serialize;

use config::*;
use output::{Manifest, Report, MANIFEST_SCHEMA, OUTPUT_VERSION};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Stage { stage: &'static str, error: anyhow::Error },
}

#[derive(Parser)]
#[command(name = "dualkb", version, about = "Knowledge stores, retrieval training and agent runs over a small text world")]
struct Cli {
    /// TOML file with one table per command, or a run manifest to repeat.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for task files loaded next to the built-in tasks.
    #[arg(long, global = true)]
    tasks: Option<PathBuf>,
    /// Where manifests and reports are written.
    #[arg(long, global = true, default_value = ".")]
    run_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct SelectArgs {
    /// train | heldout | all | comma list of `task` or `task:variation`.
    #[arg(long)]
    select: Option<String>,
    /// Variations below this index form the training split.
    #[arg(long)]
    train_variations: Option<u32>,
    /// Task families for the splits, comma separated.
    #[arg(long, value_delimiter = ',')]
    families: Option<Vec<String>>,
}

impl SelectArgs {
    fn apply(self, s: &mut Selection) {
        set(&mut s.select, self.select);
        set(&mut s.split.train_variations, self.train_variations);
        set(&mut s.split.families, self.families);
    }
}

#[derive(Args, Default)]
struct ModelArgs {
    /// Trained model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Seed of the fresh model used when no file is given.
    #[arg(long)]
    model_seed: Option<u64>,
}

impl ModelArgs {
    fn apply(self, m: &mut ModelSource) {
        if self.model.is_some() {
            m.model = self.model;
        }
        set(&mut m.model_seed, self.model_seed);
    }
}

#[derive(Args, Default)]
struct RemoteArgs {
    #[arg(long)]
    cassette: Option<PathBuf>,
    #[arg(long, value_enum)]
    cassette_mode: Option<CassetteMode>,
}

impl RemoteArgs {
    fn apply(self, r: &mut RemoteConfig) {
        if self.cassette.is_some() {
            r.cassette = self.cassette;
        }
        set(&mut r.cassette_mode, self.cassette_mode);
    }
}

#[derive(Subcommand)]
enum Command {
    /// Replay expert trajectories into an env store and distill their units.
    KbBuild {
        #[command(flatten)]
        select: SelectArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distill expert trajectories into experiential units.
    Distill {
        #[command(flatten)]
        select: SelectArgs,
        #[arg(long, value_enum)]
        backend: Option<DistillBackendKind>,
        #[command(flatten)]
        remote: RemoteArgs,
        /// Store to append to.
        #[arg(long)]
        kb: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the environmental training set.
    DatasetEnv {
        #[command(flatten)]
        select: SelectArgs,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the experiential training set.
    DatasetExp {
        #[command(flatten)]
        select: SelectArgs,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        joint_knowledge: Option<bool>,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the embedder on one or more dataset files.
    Train {
        #[arg(long = "data", value_delimiter = ',')]
        data: Option<Vec<PathBuf>>,
        #[command(flatten)]
        init: ModelArgs,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dense Recall@k of a model.
    EvalRetrieval {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Run one agent episode.
    Episode {
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        variation: Option<u32>,
        #[arg(long, value_enum)]
        decision: Option<DecisionKind>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        kb: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        use_kb: Option<bool>,
        #[arg(long)]
        joint_knowledge: Option<bool>,
        #[arg(long)]
        k_candidates: Option<usize>,
        #[arg(long)]
        k_final: Option<usize>,
        #[command(flatten)]
        remote: RemoteArgs,
        #[arg(long)]
        kb_out: Option<PathBuf>,
        /// Distill the episode into self-generated units (needs --kb-out to keep them).
        #[arg(long)]
        learn: bool,
        #[arg(long)]
        trajectory_out: Option<PathBuf>,
    },
    /// Score no-kb, kb-untuned and kb-tuned conditions with the noisy scripted model.
    Ablate {
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        k_candidates: Option<usize>,
        #[arg(long)]
        joint_knowledge: Option<bool>,
        #[arg(long)]
        train_variations: Option<u32>,
        #[arg(long)]
        model_seed: Option<u64>,
        #[arg(long)]
        train_seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Tabulate earlier run reports.
    Report {
        #[arg(required = false)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn stage<T>(stage: &'static str, r: anyhow::Result<T>) -> Result<T, CliError> {
    r.map_err(|error| CliError::Stage { stage, error })
}

struct Run {
    name: &'static str,
    config: serde_json::Value,
    metrics: serde_json::Value,
    text: Option<String>,
}

fn resolved<T: Serialize>(cfg: &T) -> serde_json::Value {
    serde_json::to_value(cfg).expect("configs serialize")
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let source = ConfigSource::load(cli.config.as_deref())?;
    let tasks = cli.tasks.clone().or_else(|| source.tasks());
    let mut catalog = Catalog::builtin();
    if let Some(dir) = &tasks {
        catalog
            .load_dir(dir)
            .map_err(|e| CliError::Usage(format!("loading tasks from {}: {e}", dir.display())))?;
    }

    let run = match cli.command {
        Command::KbBuild { select, out } => {
            let mut cfg: KbBuildConfig = source.section("kb-build")?;
            select.apply(&mut cfg.selection);
            set(&mut cfg.out, out);
            let inst = cfg.selection.resolve(&catalog)?;
            let metrics = stage("kb-build", commands::kb_build(&catalog, &cfg, &inst))?;
            Run { name: "kb-build", config: resolved(&cfg), metrics, text: None }
        }
        Command::Distill { select, backend, remote, kb, out } => {
            let mut cfg: DistillConfig = source.section("distill")?;
            select.apply(&mut cfg.selection);
            set(&mut cfg.backend, backend);
            remote.apply(&mut cfg.remote);
            if kb.is_some() {
                cfg.kb = kb;
            }
            set(&mut cfg.out, out);
            let inst = cfg.selection.resolve(&catalog)?;
            let metrics = stage("distill", commands::distill(&catalog, &cfg, &inst))?;
            Run { name: "distill", config: resolved(&cfg), metrics, text: None }
        }
        Command::DatasetEnv { select, m, seed, out } => {
            let mut cfg: DatasetEnvConfig = source.section("dataset-env")?;
            select.apply(&mut cfg.selection);
            set(&mut cfg.m, m);
            set(&mut cfg.seed, seed);
            set(&mut cfg.out, out);
            let inst = cfg.selection.resolve(&catalog)?;
            let metrics = stage("dataset-env", commands::dataset_env(&catalog, &cfg, &inst))?;
            Run { name: "dataset-env", config: resolved(&cfg), metrics, text: None }
        }
        Command::DatasetExp { select, theta, m, seed, joint_knowledge, model, out } => {
            let mut cfg: DatasetExpConfig = source.section("dataset-exp")?;
            select.apply(&mut cfg.selection);
            set(&mut cfg.theta, theta);
            set(&mut cfg.m, m);
            set(&mut cfg.seed, seed);
            set(&mut cfg.joint_knowledge, joint_knowledge);
            model.apply(&mut cfg.encoder);
            set(&mut cfg.out, out);
            let inst = cfg.selection.resolve(&catalog)?;
            let metrics = stage("dataset-exp", commands::dataset_exp(&catalog, &cfg, &inst))?;
            Run { name: "dataset-exp", config: resolved(&cfg), metrics, text: None }
        }
        Command::Train { data, init, tau, learning_rate, epochs, batch_size, seed, out } => {
            let mut cfg: TrainCmdConfig = source.section("train")?;
            set(&mut cfg.data, data);
            init.apply(&mut cfg.init);
            set(&mut cfg.train.tau, tau);
            set(&mut cfg.train.learning_rate, learning_rate);
            set(&mut cfg.train.epochs, epochs);
            set(&mut cfg.train.batch_size, batch_size);
            set(&mut cfg.train.seed, seed);
            set(&mut cfg.out, out);
            if cfg.data.is_empty() {
                return Err(CliError::Usage("train needs at least one --data file".into()));
            }
            let metrics = stage("train", commands::train_cmd(&cfg))?;
            Run { name: "train", config: resolved(&cfg), metrics, text: None }
        }
        Command::EvalRetrieval { model, data, corpus, queries, k } => {
            let mut cfg: EvalRetrievalConfig = source.section("eval-retrieval")?;
            model.apply(&mut cfg.encoder);
            if data.is_some() {
                cfg.data = data;
            }
            if corpus.is_some() {
                cfg.corpus = corpus;
            }
            if queries.is_some() {
                cfg.queries = queries;
            }
            set(&mut cfg.k, k);
            if cfg.k == 0 {
                return Err(CliError::Usage("k must be at least 1".into()));
            }
            let metrics = stage("eval-retrieval", commands::eval_retrieval(&cfg))?;
            Run { name: "eval-retrieval", config: resolved(&cfg), metrics, text: None }
        }
        Command::Episode {
            task,
            variation,
            decision,
            p,
            seed,
            budget,
            kb,
            model,
            use_kb,
            joint_knowledge,
            k_candidates,
            k_final,
            remote,
            kb_out,
            learn,
            trajectory_out,
        } => {
            let mut cfg: EpisodeConfig = source.section("episode")?;
            set(&mut cfg.task, task);
            set(&mut cfg.variation, variation);
            set(&mut cfg.decision, decision);
            set(&mut cfg.p, p);
            set(&mut cfg.seed, seed);
            if budget.is_some() {
                cfg.budget = budget;
            }
            if kb.is_some() {
                cfg.kb = kb;
            }
            model.apply(&mut cfg.encoder);
            set(&mut cfg.agent.use_kb, use_kb);
            set(&mut cfg.agent.joint_knowledge, joint_knowledge);
            set(&mut cfg.agent.retrieval.k_candidates, k_candidates);
            set(&mut cfg.agent.retrieval.k_final, k_final);
            remote.apply(&mut cfg.remote);
            if kb_out.is_some() {
                cfg.kb_out = kb_out;
            }
            cfg.learn |= learn;
            if trajectory_out.is_some() {
                cfg.trajectory_out = trajectory_out;
            }
            catalog
                .task(&cfg.task, cfg.variation)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            if cfg.budget == Some(0) {
                return Err(CliError::Usage("budget must be at least 1".into()));
            }
            let metrics = stage("episode", commands::episode(&catalog, &cfg))?;
            Run { name: "episode", config: resolved(&cfg), metrics, text: None }
        }
        Command::Ablate {
            episodes,
            p,
            seed,
            k_candidates,
            joint_knowledge,
            train_variations,
            model_seed,
            train_seed,
            epochs,
        } => {
            let mut cfg: AblateConfig = source.section("ablate")?;
            set(&mut cfg.episodes, episodes);
            set(&mut cfg.p, p);
            set(&mut cfg.seed, seed);
            set(&mut cfg.retrieval.k_candidates, k_candidates);
            set(&mut cfg.joint_knowledge, joint_knowledge);
            set(&mut cfg.training.split.train_variations, train_variations);
            set(&mut cfg.training.model_seed, model_seed);
            set(&mut cfg.training.train.seed, train_seed);
            set(&mut cfg.training.train.epochs, epochs);
            let metrics = stage("ablate", commands::ablate(&catalog, &cfg))?;
            let mut text = String::new();
            for c in metrics["conditions"].as_array().into_iter().flatten() {
                text.push_str(&format!(
                    "{:<12} mean {:>7.2}  stddev {:>6.2}\n",
                    c["condition"].as_str().unwrap_or("?"),
                    c["mean"].as_f64().unwrap_or(f64::NAN),
                    c["stddev"].as_f64().unwrap_or(f64::NAN)
                ));
            }
            Run { name: "ablate", config: resolved(&cfg), metrics, text: Some(text) }
        }
        Command::Report { inputs, out } => {
            let mut cfg: ReportConfig = source.section("report")?;
            if !inputs.is_empty() {
                cfg.inputs = inputs;
            }
            if out.is_some() {
                cfg.out = out;
            }
            if cfg.inputs.is_empty() {
                return Err(CliError::Usage("report needs at least one input".into()));
            }
            let (metrics, table) = stage("report", commands::report(&cfg))?;
            if let Some(p) = &cfg.out {
                stage("report", output::write_json(p, &Report::new("report", metrics.clone())))?;
            }
            Run { name: "report", config: resolved(&cfg), metrics, text: Some(table) }
        }
    };

    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.into(),
        version: OUTPUT_VERSION,
        command: run.name.into(),
        tasks,
        config: run.config,
    };
    let report = Report::new(run.name, run.metrics);
    stage("output", output::write_run(&cli.run_dir, &manifest, &report))?;
    let text = run
        .text
        .unwrap_or_else(|| serde_json::to_string_pretty(&report.metrics).unwrap_or_default() + "\n");
    // A closed stdout (e.g. piped into `head`) is not a failure of the run.
    let _ = std::io::stdout().write_all(text.as_bytes());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Stage { stage, error }) => {
            eprintln!("{stage} failed: {error:#}");
            ExitCode::from(2)
        }
    }
}
