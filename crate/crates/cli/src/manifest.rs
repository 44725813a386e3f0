use std::path::{Path, PathBuf};
use std::time::Instant;

use paramflow::config::PipelineConfig;
use paramflow::io::write_json;
use paramflow::Result;
use serde::{Deserialize, Serialize};

/// Provenance record written next to each produced artifact.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub inputs: Vec<(String, PathBuf)>,
    pub outputs: Vec<PathBuf>,
    pub duration_secs: f64,
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let stem = artifact
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    artifact.with_file_name(format!("{stem}.manifest.json"))
}

pub struct Recorder {
    command: &'static str,
    config: PipelineConfig,
    inputs: Vec<(String, PathBuf)>,
    started: Instant,
}

impl Recorder {
    pub fn start(command: &'static str, config: &PipelineConfig) -> Self {
        Self {
            command,
            config: config.clone(),
            inputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn input(mut self, role: &str, path: &Path) -> Self {
        self.inputs.push((role.to_string(), path.to_path_buf()));
        self
    }

    /// Writes the manifest beside `primary` listing every output.
    pub fn finish(self, primary: &Path, outputs: Vec<PathBuf>) -> Result<()> {
        let m = RunManifest {
            command: self.command.to_string(),
            version: env!("PARAMFLOW_VERSION").to_string(),
            seed: self.config.seed,
            config: self.config,
            inputs: self.inputs,
            outputs,
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        write_json(&manifest_path(primary), &m)
    }
}
