//! Run report: every headline number with the file it came from, and a
//! manifest of the written files with their digests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::RunError;
use crate::experiments::{Quantity, RunOutput};

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub kind: String,
    pub seed: Option<u64>,
    pub config: ExperimentConfig,
    pub quantities: BTreeMap<String, Quantity>,
    pub notes: Vec<String>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl RunReport {
    pub fn new(cfg: &ExperimentConfig, output: &RunOutput) -> Self {
        Self {
            tool: "fockforge",
            version: env!("CARGO_PKG_VERSION"),
            kind: cfg.kind.to_string(),
            seed: cfg.seed,
            config: cfg.clone(),
            quantities: output.quantities.clone(),
            notes: output.notes.clone(),
            files: output
                .files
                .iter()
                .map(|(name, text)| FileEntry { path: name.to_string(), bytes: text.len(), sha256: sha256_hex(text.as_bytes()) })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data serializes");
        s.push('\n');
        s
    }

    /// `key = value` lines, one per leaf of the JSON report.
    pub fn to_text(&self) -> String {
        let value = serde_json::to_value(self).expect("plain data serializes");
        let mut out = String::new();
        flatten("", &value, &mut out);
        out
    }
}

fn flatten(prefix: &str, value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        Value::Array(items) if !items.is_empty() => {
            for (i, v) in items.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), v, out);
            }
        }
        leaf => {
            let _ = writeln!(out, "{prefix} = {leaf}");
        }
    }
}

/// Writes the experiment files, `report.json` and `report.txt` into `dir`.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, output: &RunOutput) -> Result<RunReport, RunError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RunError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    for (name, text) in &output.files {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(io(&path))?;
    }
    let report = RunReport::new(cfg, output);
    for (name, text) in [("report.json", report.to_json()), ("report.txt", report.to_text())] {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(io(&path))?;
    }
    Ok(report)
}
