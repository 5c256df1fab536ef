//! Experiment runner for the multistab toolkit.

pub mod checks;
pub mod config;
pub mod experiment;
pub mod summary;

use std::path::{Path, PathBuf};

use config::ExperimentConfig;
use summary::{SeedMetrics, Summary};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// bad config, flags or inputs (exit code 1)
    #[error("invalid configuration: {0}")]
    Validation(String),
    /// failure while running (exit code 2)
    #[error("run failed: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<multistab::Error> for CliError {
    fn from(e: multistab::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pipeline {
    Train,
    Rl,
    Warmup,
    Probe,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Train => "train",
            Pipeline::Rl => "rl",
            Pipeline::Warmup => "warmup",
            Pipeline::Probe => "vaa-probe",
        }
    }
}

/// Run a pipeline over every seed of the (already scaled) config, writing
/// per-seed artifacts and `summary.json` under `output_dir`.
pub fn run_pipeline(
    cfg: &ExperimentConfig,
    pipeline: Pipeline,
    checkpoint: Option<&Path>,
) -> Result<(Summary, PathBuf), CliError> {
    if pipeline == Pipeline::Train && !cfg.task.is_supervised() {
        return Err(CliError::Validation(format!(
            "task: `train` needs a supervised task, got {:?}",
            cfg.task
        )));
    }
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| CliError::Runtime(format!("creating {}: {e}", out.display())))?;
    let seeds: Vec<SeedMetrics> = experiment::for_each_seed(cfg, |seed| match pipeline {
        Pipeline::Train => experiment::run_train(cfg, seed, &out),
        Pipeline::Rl => experiment::run_rl(cfg, seed, &out),
        Pipeline::Warmup => experiment::run_warmup(cfg, seed, &out),
        Pipeline::Probe => experiment::run_probe(cfg, seed, &out, checkpoint),
    })?;
    let config = serde_json::to_value(cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    let task = serde_json::to_value(cfg.task)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    let summary = Summary::build(pipeline.name(), &task, cfg.scale, config, &seeds);
    let path = out.join("summary.json");
    summary.write(&path)?;
    Ok((summary, path))
}
