use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use superfilter::{Error, Result};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub input_digests: BTreeMap<String, String>,
    pub output_digests: BTreeMap<String, String>,
    pub tool_version: String,
    pub wall_clock_seconds: f64,
    pub timestamp: String,
    pub summary: Value,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `out.json` -> `out.json.manifest.json`
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

/// Collects what a run read and wrote, then writes the manifest.
pub struct Recorder {
    command: &'static str,
    config: Value,
    started: Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn start(command: &'static str, config: &impl Serialize) -> Self {
        Self {
            command,
            config: serde_json::to_value(config).expect("config serializes"),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn finish(self, manifest: &Path, summary: Value) -> Result<()> {
        let digests = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>> {
            paths
                .iter()
                .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
                .collect()
        };
        let record = RunManifest {
            command: self.command.into(),
            config: self.config,
            input_digests: digests(&self.inputs)?,
            output_digests: digests(&self.outputs)?,
            tool_version: format!("superfilter {}", env!("CARGO_PKG_VERSION")),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            timestamp: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
            summary,
        };
        let mut text = serde_json::to_string_pretty(&record).expect("manifest serializes");
        text.push('\n');
        fs::write(manifest, text).map_err(|e| Error::Io {
            path: manifest.to_path_buf(),
            source: e,
        })?;
        log::debug!("wrote {}", manifest.display());
        Ok(())
    }
}
