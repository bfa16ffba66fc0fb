//! Resolved per-command configuration. Defaults come from here, a config
//! file section (`[train]`, `[ablate]`, ...) or a previous run's manifest
//! replaces them field by field, and command-line flags win over both.

use std::path::{Path, PathBuf};

use dualkb::embedder::TrainConfig;
use dualkb::experiment::{AblationConfig, SplitConfig};
use dualkb::microworld::Catalog;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::output::{Manifest, MANIFEST_SCHEMA};
use crate::CliError;

/// Which task instances a stage reads: `train`, `heldout`, `all`, or a
/// comma list of `task` (every variation) and `task:variation` items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Selection {
    pub select: String,
    pub split: SplitConfig,
}

impl Default for Selection {
    fn default() -> Self {
        Self {
            select: "train".into(),
            split: SplitConfig::default(),
        }
    }
}

impl Selection {
    pub fn resolve(&self, catalog: &Catalog) -> Result<Vec<(String, u32)>, CliError> {
        let usage = |m: String| CliError::Usage(m);
        match self.select.as_str() {
            "train" => return self.split.train_instances(catalog).map_err(|e| usage(e.to_string())),
            "heldout" => return self.split.heldout_instances(catalog).map_err(|e| usage(e.to_string())),
            "all" => return Ok(catalog.instances()),
            _ => {}
        }
        let mut out = Vec::new();
        for item in self.select.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (task, var) = match item.split_once(':') {
                Some((t, v)) => (t, Some(v.parse::<u32>().map_err(|_| usage(format!("bad variation in `{item}`")))?)),
                None => (item, None),
            };
            let n = catalog.variation_count(task).map_err(|e| usage(e.to_string()))? as u32;
            match var {
                Some(v) if v >= n => return Err(usage(format!("{task} has {n} variations, asked for {v}"))),
                Some(v) => out.push((task.to_string(), v)),
                None => out.extend((0..n).map(|v| (task.to_string(), v))),
            }
        }
        if out.is_empty() {
            return Err(usage(format!("selection `{}` names no instances", self.select)));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KbBuildConfig {
    pub selection: Selection,
    pub out: PathBuf,
}

impl Default for KbBuildConfig {
    fn default() -> Self {
        Self {
            selection: Selection::default(),
            out: "kb.jsonl".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CassetteMode {
    /// Call the endpoint directly.
    Off,
    /// Call the endpoint and append every exchange to the cassette.
    Record,
    /// Answer from the cassette only.
    Replay,
}

/// Remote chat wiring. The endpoint and token come from the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub cassette: Option<PathBuf>,
    pub cassette_mode: CassetteMode,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            cassette: None,
            cassette_mode: CassetteMode::Off,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DistillBackendKind {
    Rule,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub selection: Selection,
    pub backend: DistillBackendKind,
    pub remote: RemoteConfig,
    /// Existing store to append to.
    pub kb: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            selection: Selection::default(),
            backend: DistillBackendKind::Rule,
            remote: RemoteConfig::default(),
            kb: None,
            out: "kb.jsonl".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetEnvConfig {
    pub selection: Selection,
    pub m: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for DatasetEnvConfig {
    fn default() -> Self {
        Self {
            selection: Selection::default(),
            m: 8,
            seed: 0,
            out: "d_env.jsonl".into(),
        }
    }
}

/// A trained model file, or a fresh one from `model_seed`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSource {
    pub model: Option<PathBuf>,
    pub model_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetExpConfig {
    pub selection: Selection,
    pub theta: f64,
    pub m: usize,
    pub seed: u64,
    pub joint_knowledge: bool,
    /// Encoder for the sub-goal similarity.
    pub encoder: ModelSource,
    pub out: PathBuf,
}

impl Default for DatasetExpConfig {
    fn default() -> Self {
        Self {
            selection: Selection::default(),
            theta: 0.8,
            m: 8,
            seed: 0,
            joint_knowledge: true,
            encoder: ModelSource::default(),
            out: "d_exp.jsonl".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainCmdConfig {
    pub data: Vec<PathBuf>,
    /// Starting point; a fresh model from `model_seed` when absent.
    pub init: ModelSource,
    pub train: TrainConfig,
    pub out: PathBuf,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        Self {
            data: Vec::new(),
            init: ModelSource::default(),
            train: TrainConfig::default(),
            out: "model.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalRetrievalConfig {
    pub encoder: ModelSource,
    /// Dataset file: every instance ranks its positive among its negatives.
    pub data: Option<PathBuf>,
    /// JSONL of `{"id", "text"}` documents, paired with `queries`.
    pub corpus: Option<PathBuf>,
    /// JSONL of `{"query", "relevant": [ids]}`.
    pub queries: Option<PathBuf>,
    pub k: usize,
}

impl Default for EvalRetrievalConfig {
    fn default() -> Self {
        Self {
            encoder: ModelSource::default(),
            data: None,
            corpus: None,
            queries: None,
            k: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    Oracle,
    Noisy,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub task: String,
    pub variation: u32,
    pub decision: DecisionKind,
    /// Confusion probability for the noisy model.
    pub p: f64,
    pub seed: u64,
    /// Step budget; expert length times `budget_slack` when absent.
    pub budget: Option<usize>,
    pub budget_slack: f64,
    /// Knowledge stores to start from; empty stores when absent.
    pub kb: Option<PathBuf>,
    pub encoder: ModelSource,
    pub agent: dualkb::agent::AgentConfig,
    pub remote: RemoteConfig,
    /// Write the stores after the episode (with self-generated units when
    /// `learn` is set) to this path.
    pub kb_out: Option<PathBuf>,
    pub learn: bool,
    pub trajectory_out: Option<PathBuf>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            task: "boil".into(),
            variation: 0,
            decision: DecisionKind::Oracle,
            p: 0.3,
            seed: 0,
            budget: None,
            budget_slack: 1.25,
            kb: None,
            encoder: ModelSource::default(),
            agent: dualkb::agent::AgentConfig::default(),
            remote: RemoteConfig::default(),
            kb_out: None,
            learn: false,
            trajectory_out: None,
        }
    }
}

pub type AblateConfig = AblationConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub inputs: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Loaded `--config` file: either a TOML file with one table per command or
/// a run manifest.
pub enum ConfigSource {
    None,
    Toml(toml::Table),
    Manifest(Manifest),
}

impl ConfigSource {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::None);
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("reading config {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let m: Manifest = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            if m.schema != MANIFEST_SCHEMA {
                return Err(CliError::Usage(format!("{}: not a run manifest", path.display())));
            }
            return Ok(Self::Manifest(m));
        }
        let table: toml::Table =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Ok(Self::Toml(table))
    }

    pub fn tasks(&self) -> Option<PathBuf> {
        match self {
            Self::Manifest(m) => m.tasks.clone(),
            _ => None,
        }
    }

    /// Config for `command`, starting from defaults.
    pub fn section<T: DeserializeOwned + Default>(&self, command: &str) -> Result<T, CliError> {
        match self {
            Self::None => Ok(T::default()),
            Self::Toml(table) => match table.get(command) {
                None => Ok(T::default()),
                Some(v) => v
                    .clone()
                    .try_into()
                    .map_err(|e| CliError::Usage(format!("[{command}]: {e}"))),
            },
            Self::Manifest(m) if m.command == command => serde_json::from_value(m.config.clone())
                .map_err(|e| CliError::Usage(format!("manifest config: {e}"))),
            Self::Manifest(m) => Err(CliError::Usage(format!(
                "manifest is for `{}`, not `{command}`",
                m.command
            ))),
        }
    }
}
