use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub label: String,
    pub seed: u64,
}

/// Everything needed to rerun a command: the resolved configuration, input
/// digests, every seed used and the digest of every file written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<FileDigest>,
    pub seeds: Vec<SeedRecord>,
    /// Seconds since the Unix epoch; taken from SOURCE_DATE_EPOCH when set.
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        let now = timestamp();
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            dataset: None,
            seeds: Vec::new(),
            started_unix: now,
            finished_unix: now,
            outputs: Vec::new(),
        }
    }

    pub fn output(&self, name: &str) -> Option<&FileDigest> {
        self.outputs.iter().find(|f| f.path == name)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    /// Stamps the finish time and writes the manifest into `dir`.
    pub fn finish(self, dir: &Path) -> Result<PathBuf, CliError> {
        self.finish_as(dir, MANIFEST_FILE)
    }

    pub fn finish_as(mut self, dir: &Path, name: &str) -> Result<PathBuf, CliError> {
        self.finished_unix = timestamp();
        let path = dir.join(name);
        let mut text = serde_json::to_string_pretty(&self).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::write(&path, e))?;
        Ok(path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn timestamp() -> u64 {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()) {
        return v;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Writes `bytes` to `dir/name` and records its digest.
pub fn write_output(dir: &Path, name: &str, bytes: &[u8], manifest: &mut RunManifest) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| CliError::write(&path, e))?;
    log::info!("wrote {}", path.display());
    manifest.outputs.push(FileDigest { path: name.to_string(), sha256: sha256_hex(bytes) });
    Ok(())
}
