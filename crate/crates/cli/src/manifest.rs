//! Per-artifact run records.

use anyhow::{Context, Result};
use neurotraj_core::io::{sha256_file, sha256_hex, write_atomic};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.display().to_string(),
            sha256: sha256_file(path).with_context(|| format!("hashing {}", path.display()))?,
        })
    }
}

/// What a command read, what it wrote, and with which settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub tool_version: String,
    /// Wall-clock creation time; the only field that differs between reruns.
    pub created_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, args: &[String], config_json: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            args: args.to_vec(),
            config_hash: sha256_hex(config_json.as_bytes()),
            seed,
            inputs: vec![],
            outputs: vec![],
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileRecord::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(FileRecord::of(path)?);
        Ok(())
    }

    /// Writes `<artifact>.manifest.json` next to the primary artifact.
    pub fn write_beside(&self, artifact: &Path) -> Result<PathBuf> {
        let mut name = artifact.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        let path = artifact.with_file_name(name);
        self.write_to(&path)?;
        Ok(path)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// The manifest with its timestamp cleared, for rerun comparisons.
    pub fn without_timestamp(&self) -> Self {
        Self {
            created_unix: 0,
            ..self.clone()
        }
    }
}
