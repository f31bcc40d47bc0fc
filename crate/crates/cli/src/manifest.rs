use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Record of one invocation: what ran, with which settings, on which inputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    /// Input path → sha256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub started: DateTime<Utc>,
    pub finished: Option<DateTime<Utc>>,
    pub status: String,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "serde_json::Map::is_empty")]
    pub summary: serde_json::Map<String, serde_json::Value>,
}

impl RunManifest {
    pub fn start(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started: Utc::now(),
            finished: None,
            status: "running".into(),
            exit_code: 0,
            summary: serde_json::Map::new(),
        }
    }

    /// Hashes `path` and records it as an input.
    pub fn add_input(&mut self, path: &Path) -> io::Result<()> {
        let bytes = fs::read(path)?;
        self.inputs.insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        if let Ok(v) = serde_json::to_value(value) {
            self.summary.insert(key.to_string(), v);
        }
    }

    pub fn finish(&mut self, status: String, exit_code: i32) {
        self.finished = Some(Utc::now());
        self.status = status;
        self.exit_code = exit_code;
    }

    /// Writes the manifest to `path`, or to stderr when there is nowhere to put it.
    pub fn emit(&self, path: Option<&Path>) -> io::Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        match path {
            Some(p) => fs::write(p, json + "\n"),
            None => {
                eprintln!("{json}");
                Ok(())
            }
        }
    }
}

/// `report.json` → `report.json.manifest.json`.
pub fn default_manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
