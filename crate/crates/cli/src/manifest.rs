use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Record of one CLI run, written into its output directory.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub started_at: String,
    pub finished_at: String,
    /// Produced files and directories, relative to the output directory, sorted.
    pub artifacts: Vec<String>,
    pub tool_version: String,
}

pub struct RunRecorder {
    command: String,
    started_at: String,
    out: PathBuf,
    artifacts: Vec<PathBuf>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunRecorder {
    pub fn start(command: &str, out: &Path) -> Self {
        Self { command: command.to_string(), started_at: now(), out: out.to_path_buf(), artifacts: Vec::new() }
    }

    pub fn add(&mut self, path: impl Into<PathBuf>) {
        self.artifacts.push(path.into());
    }

    /// Writes `run_manifest.json` via a temporary file and rename.
    pub fn finish(self, config: serde_json::Value, seed: Option<u64>) -> Result<PathBuf> {
        let mut artifacts = Vec::with_capacity(self.artifacts.len());
        for path in &self.artifacts {
            anyhow::ensure!(path.exists(), "artifact {} was not produced", path.display());
            let rel = path.strip_prefix(&self.out).unwrap_or(path);
            artifacts.push(rel.to_string_lossy().replace('\\', "/"));
        }
        artifacts.sort();
        artifacts.dedup();
        let manifest = RunManifest {
            command: self.command,
            config,
            seed,
            started_at: self.started_at,
            finished_at: now(),
            artifacts,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        };
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let path = self.out.join(MANIFEST_FILE);
        let tmp = self.out.join(format!(".{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(&manifest)?).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
