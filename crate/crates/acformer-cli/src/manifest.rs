//! Run manifests: written into the output directory before any computation
//! starts, carrying everything needed to reproduce the run.

use serde::Serialize;
use std::path::Path;

use crate::config_file::RunConfig;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub artifact_version: String,
    pub config_path: Option<String>,
    pub data_path: Option<String>,
    pub checkpoint_path: Option<String>,
    pub out_dir: String,
    pub seed: u64,
    pub ablation: Option<String>,
    pub mode: Option<String>,
    pub resolved: Option<RunConfig>,
    pub extra: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, out_dir: &Path, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            config_path: None,
            data_path: None,
            checkpoint_path: None,
            out_dir: out_dir.display().to_string(),
            seed,
            ablation: None,
            mode: None,
            resolved: None,
            extra: serde_json::Value::Null,
        }
    }

    /// Serialize to `<out_dir>/manifest.json`.
    pub fn write(&self, out_dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(out_dir)?;
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(out_dir.join("manifest.json"), json + "\n")
    }
}
