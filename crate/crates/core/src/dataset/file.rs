use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::embedder::TrainingInstance;

pub const DATASET_SCHEMA: &str = "dualkb.dataset";
pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Env,
    Exp,
    Mixed,
}

/// First line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: String,
    pub version: u32,
    pub kind: DatasetKind,
    pub seed: u64,
    pub m: usize,
    pub theta: Option<f64>,
    /// `task:variation` ids of the source trajectories.
    pub sources: Vec<String>,
    pub count: usize,
}

impl DatasetManifest {
    pub fn new(kind: DatasetKind, seed: u64, m: usize, theta: Option<f64>, sources: Vec<String>) -> Self {
        Self {
            schema: DATASET_SCHEMA.into(),
            version: DATASET_SCHEMA_VERSION,
            kind,
            seed,
            m,
            theta,
            sources,
            count: 0,
        }
    }
}

/// Manifest line followed by one `{query, positive, negatives}` record per line.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub manifest: DatasetManifest,
    pub instances: Vec<TrainingInstance>,
}

impl DatasetFile {
    pub fn new(mut manifest: DatasetManifest, instances: Vec<TrainingInstance>) -> Self {
        manifest.count = instances.len();
        Self { manifest, instances }
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<(), DatasetError> {
        serde_json::to_writer(&mut *out, &self.manifest).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        for inst in &self.instances {
            serde_json::to_writer(&mut *out, inst).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_canonical_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_from(input: impl std::io::Read) -> Result<Self, DatasetError> {
        let parse = |line: usize, e: serde_json::Error| DatasetError::Parse {
            line,
            message: e.to_string(),
        };
        let mut lines = BufReader::new(input).lines();
        let header = lines.next().ok_or(DatasetError::Parse {
            line: 1,
            message: "missing manifest".into(),
        })??;
        let manifest: DatasetManifest = serde_json::from_str(&header).map_err(|e| parse(1, e))?;
        if manifest.schema != DATASET_SCHEMA {
            return Err(DatasetError::Parse {
                line: 1,
                message: format!("schema `{}` is not `{DATASET_SCHEMA}`", manifest.schema),
            });
        }
        if manifest.version != DATASET_SCHEMA_VERSION {
            return Err(DatasetError::SchemaVersionMismatch {
                found: manifest.version,
                expected: DATASET_SCHEMA_VERSION,
            });
        }
        let mut instances = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let inst: TrainingInstance = serde_json::from_str(&line).map_err(|e| parse(i + 2, e))?;
            inst.validate().map_err(|e| DatasetError::Parse {
                line: i + 2,
                message: e.to_string(),
            })?;
            instances.push(inst);
        }
        if instances.len() != manifest.count {
            return Err(DatasetError::Parse {
                line: instances.len() + 1,
                message: format!("manifest promises {} records, found {}", manifest.count, instances.len()),
            });
        }
        Ok(Self { manifest, instances })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Self::read_from(std::fs::File::open(path)?)
    }
}
