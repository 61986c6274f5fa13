use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const RUN_MANIFEST: &str = "run.json";

/// Written as `run.json` at the root of every output directory.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub started_at: String,
    pub finished_at: String,
    pub config: Value,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
    pub summary: Value,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn start(command: &str, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            seed,
            started_at: now(),
            finished_at: String::new(),
            config: Value::Null,
            outputs: Vec::new(),
            summary: Value::Null,
            notes: Vec::new(),
        }
    }

    pub fn output(&mut self, root: &Path, path: &Path) {
        let rel = path.strip_prefix(root).unwrap_or(path);
        self.outputs.push(rel.to_string_lossy().replace('\\', "/"));
    }

    pub fn finish(mut self, root: &Path) -> CliResult<PathBuf> {
        self.finished_at = now();
        let path = root.join(RUN_MANIFEST);
        write_json(&path, &self)?;
        Ok(path)
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
