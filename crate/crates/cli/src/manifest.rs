//! Run manifests: enough to re-run a command and check its outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub path: String,
    pub sha256: String,
}

impl OutputDigest {
    pub fn of(path: &Path, contents: &[u8]) -> Self {
        OutputDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(contents),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    pub model: String,
    pub model_sha256: String,
    pub seed: Option<u64>,
    pub rng: Option<String>,
    pub version: String,
    pub duration_ms: f64,
    pub outputs: Vec<OutputDigest>,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n")
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}
