//! Experiment configuration files.
//!
//! A config is a TOML table. Top-level keys select the task, seeds and
//! output directory; the `network`, `data`, `maze`, `warmup`, `train` and
//! `drqn` tables hold the settings of each stage. Any key can be overridden
//! from the command line with `--set path.to.key=value`, where `value` is
//! parsed as a TOML value (falling back to a bare string).

use std::path::{Path, PathBuf};

use multistab::cells::CellKind;
use multistab::drqn::DrqnConfig;
use multistab::network::{LayerSpec, NetworkSpec};
use multistab::trainer::TrainConfig;
use multistab::warmup::WarmupConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming the directory that holds the MNIST IDX files.
pub const DATA_ENV: &str = "MULTISTAB_DATA";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Copy,
    Denoise,
    Pmnist,
    Plmnist,
    Tmaze,
    VaaProbe,
    Gradcheck,
}

impl Task {
    pub fn is_supervised(self) -> bool {
        matches!(self, Task::Copy | Task::Denoise | Task::Pmnist | Task::Plmnist)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarmupMode {
    None,
    Full,
    Double,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellName {
    Gru,
    Lstm,
    /// LSTM with chrono-initialised biases, `T_max` set to the sequence length
    Chrono,
    Mgu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub cell: CellName,
    pub widths: Vec<usize>,
    #[serde(default = "default_warmup_mode")]
    pub warmup: WarmupMode,
    #[serde(default = "half")]
    pub warmed_fraction: f64,
}

fn default_warmup_mode() -> WarmupMode {
    WarmupMode::None
}

fn half() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// sequence length T (copy, denoise)
    pub length: usize,
    /// forgetting period N (denoise)
    pub forget: usize,
    /// appended black lines (plmnist)
    pub black_lines: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub permutation_seed: u64,
    /// dataset seed offset; run `s` draws its train set from `seed + 2s` and
    /// its test set from `seed + 2s + 1`
    pub seed: u64,
    /// MNIST directory; falls back to the `MULTISTAB_DATA` variable
    pub mnist_dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            length: 50,
            forget: 5,
            black_lines: 72,
            train_count: 40_000,
            test_count: 50_000,
            permutation_seed: 0,
            seed: 1000,
            mnist_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MazeConfig {
    pub length: usize,
}

impl Default for MazeConfig {
    fn default() -> Self {
        MazeConfig { length: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// uniform shrink factor for sample counts, widths and epochs
    #[serde(default = "one")]
    pub scale: f64,
    pub network: NetworkConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub maze: MazeConfig,
    #[serde(default)]
    pub warmup: WarmupConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub drqn: DrqnConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

fn one() -> f64 {
    1.0
}

impl ExperimentConfig {
    /// Parse a TOML document and apply `key=value` overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut tree: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Validation(format!("config: {e}")))?;
        for ov in overrides {
            apply_override(&mut tree, ov)?;
        }
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(tree))
            .map_err(|e| CliError::Validation(format!("{}: {}", e.path(), e.inner().message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let field = |name: &str, msg: String| CliError::Validation(format!("{name}: {msg}"));
        if self.seeds.is_empty() {
            return Err(field("seeds", "at least one seed is required".into()));
        }
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(field("scale", format!("must lie in (0, 1], got {}", self.scale)));
        }
        if self.network.widths.is_empty() || self.network.widths.contains(&0) {
            return Err(field("network.widths", "needs one or more positive widths".into()));
        }
        if self.network.warmup == WarmupMode::Double && self.network.widths.iter().any(|&w| w < 2) {
            return Err(field(
                "network.warmup",
                "double mode needs layers of width >= 2 to split".into(),
            ));
        }
        self.warmup.validate().map_err(|e| field("warmup", e.to_string()))?;
        self.train.validate().map_err(|e| field("train", e.to_string()))?;
        self.drqn.validate().map_err(|e| field("drqn", e.to_string()))?;
        if self.task == Task::Tmaze && self.maze.length == 0 {
            return Err(field("maze.length", "must be >= 1".into()));
        }
        if self.task == Task::Denoise && self.data.length < self.data.forget + 5 {
            return Err(field("data.length", "denoising needs T - N >= 5".into()));
        }
        Ok(())
    }

    /// Copy with sample counts, widths and epochs multiplied by `scale`.
    pub fn scaled(&self) -> ExperimentConfig {
        let s = self.scale;
        let shrink = |n: usize| ((n as f64 * s).round() as usize).max(1);
        let mut c = self.clone();
        c.network.widths = c.network.widths.iter().map(|&w| shrink(w)).collect();
        if c.network.warmup == WarmupMode::Double {
            c.network.widths = c.network.widths.iter().map(|&w| w.max(2)).collect();
        }
        c.data.train_count = shrink(c.data.train_count);
        c.data.test_count = shrink(c.data.test_count);
        c.train.epochs = if c.train.epochs == 0 { 0 } else { shrink(c.train.epochs) };
        c.drqn.episodes = if c.drqn.episodes == 0 { 0 } else { shrink(c.drqn.episodes) };
        c
    }

    pub fn cell_kind(&self, seq_len: usize) -> CellKind {
        match self.network.cell {
            CellName::Gru => CellKind::Gru,
            CellName::Lstm => CellKind::LSTM,
            CellName::Chrono => CellKind::Lstm {
                chrono: Some(seq_len.max(2)),
            },
            CellName::Mgu => CellKind::Mgu,
        }
    }

    pub fn network_spec(&self, input_dim: usize, output_dim: usize, seq_len: usize) -> NetworkSpec {
        let kind = self.cell_kind(seq_len);
        NetworkSpec {
            input_dim,
            layers: self
                .network
                .widths
                .iter()
                .map(|&w| LayerSpec {
                    warmed_fraction: self.network.warmed_fraction,
                    ..LayerSpec::new(kind, w)
                })
                .collect(),
            double: self.network.warmup == WarmupMode::Double,
            output_dim: Some(output_dim),
        }
    }

    pub fn mnist_dir(&self) -> Option<PathBuf> {
        self.data
            .mnist_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Set `a.b.c=value` in a TOML tree, creating intermediate tables.
pub fn apply_override(tree: &mut toml::Table, ov: &str) -> Result<(), CliError> {
    let (path, raw) = ov
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("override `{ov}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Validation(format!("override `{ov}` has an empty key")));
    }
    let mut node = tree;
    for k in &keys[..keys.len() - 1] {
        let entry = node
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Validation(format!("override `{ov}`: `{k}` is not a table")))?;
    }
    node.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}
