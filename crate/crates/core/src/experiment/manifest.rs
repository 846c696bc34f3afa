use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Index of everything written under an output directory.
///
/// No timestamps: two runs of the same config produce the same bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    /// Output-relative path → SHA-256 of the file.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    /// The manifest already in `out_dir` if it belongs to the same config,
    /// otherwise an empty one.
    pub fn open(out_dir: &Path, config_hash: &str, seed: u64) -> Self {
        let existing = std::fs::read(out_dir.join(MANIFEST_FILE))
            .ok()
            .and_then(|b| serde_json::from_slice::<Manifest>(&b).ok())
            .filter(|m| m.config_hash == config_hash);
        existing.unwrap_or_else(|| Self {
            config_hash: config_hash.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            artifacts: BTreeMap::new(),
        })
    }

    pub fn load(out_dir: &Path) -> Result<Self, ExperimentError> {
        let path = out_dir.join(MANIFEST_FILE);
        let bytes = std::fs::read(&path).map_err(|e| ExperimentError::io(&path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| ExperimentError::Runtime(format!("{}: {e}", path.display())))
    }

    /// Writes `bytes` to `out_dir/rel` and records its digest.
    pub fn write(&mut self, out_dir: &Path, rel: &str, bytes: &[u8]) -> Result<(), ExperimentError> {
        let path = out_dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| ExperimentError::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| ExperimentError::io(&path, e))?;
        self.artifacts.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn save(&self, out_dir: &Path) -> Result<(), ExperimentError> {
        std::fs::create_dir_all(out_dir).map_err(|e| ExperimentError::io(out_dir, e))?;
        let path = out_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| ExperimentError::io(&path, e))
    }

    /// Artifacts whose file is missing or no longer matches its digest.
    pub fn verify(&self, out_dir: &Path) -> Vec<String> {
        self.artifacts
            .iter()
            .filter(|(rel, digest)| {
                std::fs::read(out_dir.join(rel.as_str())).map_or(true, |b| sha256_hex(&b) != **digest)
            })
            .map(|(rel, _)| rel.clone())
            .collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
