//! JSON run manifests written beside every output artifact.
//!
//! A manifest records what produced a file: the subcommand, tool versions,
//! the input files, the resolved configuration and its hash, and result
//! counts. All fields are deterministic except `generated_unix_ms`, which
//! is the one field to ignore when comparing two runs for reproducibility.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use xce_core::Error;

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    versions: BTreeMap<&'static str, &'static str>,
    generated_unix_ms: u128,
    inputs: &'a [String],
    config: &'a BTreeMap<String, String>,
    config_hash: String,
    counts: &'a BTreeMap<String, Value>,
}

/// SHA-256 over the sorted `key=value` lines of the resolved configuration.
pub fn config_hash(config: &BTreeMap<String, String>) -> String {
    let mut hasher = Sha256::new();
    for (key, value) in config {
        hasher.update(key.as_bytes());
        hasher.update(b"=");
        hasher.update(value.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

/// Writes `<out>.manifest.json` describing a run and returns its path.
pub fn write(
    out: &Path,
    command: &str,
    inputs: &[String],
    config: &BTreeMap<String, String>,
    counts: &BTreeMap<String, Value>,
) -> anyhow::Result<PathBuf> {
    let manifest = Manifest {
        command,
        versions: BTreeMap::from([
            ("xce", env!("CARGO_PKG_VERSION")),
            ("xce-core", xce_core::VERSION),
        ]),
        generated_unix_ms: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0),
        inputs,
        config,
        config_hash: config_hash(config),
        counts,
    };
    let path = PathBuf::from(format!("{}.manifest.json", out.display()));
    let body = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(&path, body).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path)
}
