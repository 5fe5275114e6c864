//! Run manifests: what ran, with which configuration, and what it produced.
//! Manifests carry no timestamps or absolute paths beyond those given on the
//! command line, so a rerun with the same inputs reproduces them byte for byte.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use longweave_core::llm::LedgerSnapshot;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub mock: bool,
    pub backend: String,
    pub calls: LedgerSnapshot,
    pub outputs: Vec<OutputFile>,
    pub stats: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn describe_output(path: &Path) -> Result<OutputFile> {
    let bytes = std::fs::read(path).with_context(|| format!("reading back {}", path.display()))?;
    Ok(OutputFile { path: path.display().to_string(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 })
}

/// `out.jsonl` → `out.jsonl.manifest.json`.
pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    primary.with_file_name(name)
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_sits_beside_output() {
        assert_eq!(manifest_path(Path::new("runs/out.jsonl")), Path::new("runs/out.jsonl.manifest.json"));
        assert_eq!(manifest_path(Path::new("grid.csv")), Path::new("grid.csv.manifest.json"));
    }

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
