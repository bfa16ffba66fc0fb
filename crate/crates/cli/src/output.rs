//! Run artifacts written to the run directory.
//!
//! `<command>.manifest.json`:
//! ```json
//! {"schema": "dualkb.manifest", "version": 1, "command": "train",
//!  "tasks": null, "config": { ...fully resolved command config... }}
//! ```
//! Passing a manifest back through `--config` reruns the same command with
//! the same config.
//!
//! `<command>.report.json`:
//! ```json
//! {"schema": "dualkb.report", "version": 1, "command": "train",
//!  "metrics": { ...command-specific... }}
//! ```
//! Reports hold no timings or host details, so a rerun of the same config
//! reproduces the file byte for byte.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const MANIFEST_SCHEMA: &str = "dualkb.manifest";
pub const REPORT_SCHEMA: &str = "dualkb.report";
pub const OUTPUT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub version: u32,
    pub command: String,
    pub tasks: Option<PathBuf>,
    pub config: Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub version: u32,
    pub command: String,
    pub metrics: Value,
}

impl Report {
    pub fn new(command: &str, metrics: Value) -> Self {
        Self {
            schema: REPORT_SCHEMA.into(),
            version: OUTPUT_VERSION,
            command: command.into(),
            metrics,
        }
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_run(run_dir: &Path, manifest: &Manifest, report: &Report) -> anyhow::Result<()> {
    write_json(&run_dir.join(format!("{}.manifest.json", manifest.command)), manifest)?;
    write_json(&run_dir.join(format!("{}.report.json", report.command)), report)
}

/// One `path = value` row per scalar leaf, in key order.
pub fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        Value::Array(items) if items.iter().all(|i| !i.is_object() && !i.is_array()) => {
            out.push((prefix.into(), v.to_string()));
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), v, out);
            }
        }
        _ => out.push((prefix.into(), v.to_string())),
    }
}
