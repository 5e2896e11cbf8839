use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    /// SHA-256 of the effective configuration (after command-line overrides).
    pub config_hash: String,
    pub seed: u64,
    pub workers: usize,
    pub versions: BTreeMap<String, String>,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn checksum(path: &Path) -> std::io::Result<OutputEntry> {
    let data = std::fs::read(path)?;
    Ok(OutputEntry { file: path.file_name().unwrap().to_string_lossy().into_owned(), bytes: data.len() as u64, sha256: sha256_hex(&data) })
}
