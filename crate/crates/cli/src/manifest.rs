use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

use ambient_splat::TrainConfig;

/// Contents of `run.json`: enough to rerun the command.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub config: TrainConfig,
    /// Command-specific inputs beyond the config (synth spec, split, paths).
    pub inputs: Value,
    pub outputs: Vec<PathBuf>,
    pub timings: Timings,
}

#[derive(Debug, Default, Serialize)]
pub struct Timings {
    pub total_seconds: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<(String, f64)>,
}

pub struct Recorder {
    started: Instant,
    pub manifest: Manifest,
}

impl Recorder {
    pub fn new(command: &str, config: &TrainConfig) -> Self {
        Self {
            started: Instant::now(),
            manifest: Manifest {
                tool: env!("CARGO_PKG_NAME"),
                version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                argv: std::env::args().collect(),
                seed: config.seed,
                config: config.clone(),
                inputs: Value::Null,
                outputs: Vec::new(),
                timings: Timings::default(),
            },
        }
    }

    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let v = f();
        self.manifest.timings.stages.push((name.to_string(), t.elapsed().as_secs_f64()));
        v
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.to_path_buf());
    }

    pub fn finish(mut self, out: &Path) -> Result<()> {
        self.manifest.timings.total_seconds = self.started.elapsed().as_secs_f64();
        let path = out.join("run.json");
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
