//! Run manifests: what was run, with which config and data, and hashes of
//! everything it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as invoked.
    pub argv: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub config_sha256: String,
    /// The fully resolved configuration, defaults included.
    pub config: String,
    pub seeds: Vec<u64>,
    pub started: String,
    pub finished: String,
    pub out_dir: PathBuf,
    /// Input files (datasets, checkpoints) by path, git-style blob hashes.
    pub inputs: BTreeMap<String, String>,
    /// Written files relative to `out_dir`, sha256 of their bytes.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?))
}

/// Content hash over `blob <len>\0<bytes>`, the object layout git uses,
/// with sha256.
pub fn blob_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(&bytes);
    Ok(hex::encode(h.finalize()))
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn hash_outputs(&mut self, files: &[PathBuf]) -> Result<()> {
        for f in files {
            let rel = f.strip_prefix(&self.out_dir).unwrap_or(f);
            self.outputs.insert(rel.to_string_lossy().into_owned(), file_sha256(f)?);
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}
