use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{RunConfig, RunMetrics, Seeds};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one run: what produced it and every file it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub seeds: Seeds,
    pub metrics: RunMetrics,
    /// File name (relative to the run directory) → SHA-256, hex encoded.
    pub files: BTreeMap<String, String>,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl Manifest {
    pub fn new(config: &RunConfig, seeds: Seeds, metrics: RunMetrics, files: Vec<(String, String)>) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            seeds,
            metrics,
            files: files.into_iter().collect(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Checks that every file listed in the manifest of `dir` exists with the
/// recorded hash.
pub fn verify_manifest(dir: &Path) -> Result<Manifest> {
    let manifest = Manifest::read(dir)?;
    let mut problems = Vec::new();
    for (name, expected) in &manifest.files {
        let path = dir.join(name);
        match std::fs::read(&path) {
            Ok(bytes) if sha256_hex(&bytes) == *expected => {}
            Ok(_) => problems.push(format!("{name}: hash mismatch")),
            Err(_) => problems.push(format!("{name}: missing")),
        }
    }
    if problems.is_empty() {
        Ok(manifest)
    } else {
        Err(Error::Verify(problems.join("; ")))
    }
}
