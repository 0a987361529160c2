//! Run manifests: every CLI run appends exactly one JSON line to
//! `<out_dir>/runs.jsonl` (append-only), capturing the command, the
//! effective config, the seed and the produced artifacts.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::Result;

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub version: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub config_toml: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn start(command: &str, seed: u64, config_toml: String) -> Self {
        Self {
            schema_version: 1,
            command: command.to_string(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
            config_toml,
            outputs: Vec::new(),
        }
    }

    pub fn finish(mut self, outputs: Vec<PathBuf>) -> Self {
        self.finished_unix_ms = now_ms();
        self.outputs = outputs
            .into_iter()
            .map(|p| p.display().to_string())
            .collect();
        self
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn append_manifest(out_dir: &Path, manifest: &RunManifest) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join("runs.jsonl");
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)?;
    writeln!(f, "{}", serde_json::to_string(manifest)?)?;
    Ok(path)
}
