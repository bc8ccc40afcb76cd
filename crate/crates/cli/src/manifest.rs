use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Result;
use serde::Serialize;
use sml_core::fsio::write_atomic;

/// Record of one CLI invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_paths: Vec<PathBuf>,
    pub seeds: Vec<u64>,
    pub build_id: String,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    pub outputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub summary: serde_json::Value,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    start: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            manifest: RunManifest {
                command: command.to_owned(),
                args: std::env::args().skip(1).collect(),
                config_paths: Vec::new(),
                seeds: Vec::new(),
                build_id: format!("{}-{}", env!("CARGO_PKG_VERSION"), env!("SML_BUILD_ID")),
                started_unix,
                wall_clock_secs: 0.0,
                outputs: Vec::new(),
                summary: serde_json::Value::Null,
            },
            start: Instant::now(),
        }
    }

    pub fn config(&mut self, p: &Path) -> &mut Self {
        self.manifest.config_paths.push(p.to_path_buf());
        self
    }

    pub fn seed(&mut self, s: u64) -> &mut Self {
        self.manifest.seeds.push(s);
        self
    }

    pub fn output(&mut self, p: &Path) -> &mut Self {
        self.manifest.outputs.push(p.to_path_buf());
        self
    }

    pub fn summary(&mut self, v: serde_json::Value) -> &mut Self {
        self.manifest.summary = v;
        self
    }

    /// Writes the manifest to `path` and returns it.
    pub fn finish(mut self, path: &Path) -> Result<RunManifest> {
        self.manifest.wall_clock_secs = self.start.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self.manifest)?;
        write_atomic(path, format!("{text}\n").as_bytes())?;
        Ok(self.manifest)
    }
}

/// `dir/manifest.json` for directory outputs, `file.manifest.json` for a
/// single output file.
pub fn manifest_path_for_file(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}
