//! Run manifests: what a command read, what it wrote, and with which config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use crush_core::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;
pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

impl Artifact {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self { path: path.to_path_buf(), sha256: sha256_file(path)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub config: TrainConfig,
    /// Hash of every dataset file read, keyed by role (`graph`, `train`, ...).
    pub datasets: BTreeMap<String, Artifact>,
    /// Checkpoint this command started from.
    pub predecessor: Option<Artifact>,
    pub checkpoint: Option<Artifact>,
    pub outputs: Vec<Artifact>,
}

impl Manifest {
    pub fn new(command: &str, config: &TrainConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_owned(),
            seed: config.seed,
            config: config.clone(),
            datasets: BTreeMap::new(),
            predecessor: None,
            checkpoint: None,
            outputs: Vec::new(),
        }
    }

    pub fn dataset(&mut self, role: &str, path: &Path) -> Result<()> {
        self.datasets.insert(role.to_owned(), Artifact::of(path)?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(FILE_NAME);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}
