//! Per-output-directory run manifests.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use gfm_core::io::{file_sha256, write_string};
use gfm_core::{Error, Result};
use serde::Serialize;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// Input path as given → SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    /// Output file name → SHA-256; the manifest itself excluded.
    pub outputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

/// Seconds since the epoch, or `SOURCE_DATE_EPOCH` when set so that
/// reruns can produce byte-identical manifests.
fn now() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
    {
        return t;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn start(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started_unix: now(),
            finished_unix: 0,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let hash = file_sha256(path)?;
        self.inputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    /// Hashes every regular file directly inside `dir` and writes
    /// `manifest.json` there.
    pub fn finish(mut self, dir: &Path) -> Result<()> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let path = entry.path();
            let name = entry.file_name().to_string_lossy().into_owned();
            if path.is_file() && name != MANIFEST_FILE {
                self.outputs.insert(name, file_sha256(&path)?);
            }
        }
        self.finished_unix = now();
        let mut body = serde_json::to_string_pretty(&self).expect("manifest serializes");
        body.push('\n');
        write_string(&dir.join(MANIFEST_FILE), &body)
    }
}
