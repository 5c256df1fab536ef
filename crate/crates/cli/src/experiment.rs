//! Per-seed pipelines behind the subcommands.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use multistab::benchmarks::{
    gen_copy_first_input, gen_denoising, load_mnist_idx, make_permuted_sequences, CopyFirstInputSpec, Dataset,
    DenoisingSpec, MnistMode, PermutedMnistSpec, MNIST_PIXELS, MNIST_SIDE,
};
use multistab::drqn::{self, Histories, ReplayBuffer, HISTORY_INPUT};
use multistab::network::NetworkParams;
use multistab::sequences::Sequences;
use multistab::tmaze::{default_horizon, TMaze, TMazeConfig, NUM_ACTIONS};
use multistab::trainer::{train_supervised, Split, TrainConfig, TrainSubset};
use multistab::vaa::{self, ProbeRow};
use multistab::warmup::{warmup, WarmupConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, Task, WarmupMode, DATA_ENV};
use crate::summary::SeedMetrics;
use crate::CliError;

/// Train and test sets of a supervised task, plus the sequence length.
pub struct TaskData {
    pub train: Dataset,
    pub test: Dataset,
    pub seq_len: usize,
}

const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

fn mnist_sets(cfg: &ExperimentConfig, mode: MnistMode) -> Result<TaskData, CliError> {
    let dir = cfg.mnist_dir().ok_or_else(|| {
        CliError::Runtime(format!("MNIST tasks need data.mnist_dir or the {DATA_ENV} variable"))
    })?;
    let load = |img: &str, lbl: &str, n: usize| -> Result<Dataset, CliError> {
        let mut images = load_mnist_idx(&dir.join(img), &dir.join(lbl))
            .map_err(|e| CliError::Runtime(format!("loading MNIST from {}: {e}", dir.display())))?;
        images.truncate(n);
        let spec = PermutedMnistSpec {
            mode,
            permutation_seed: cfg.data.permutation_seed,
        };
        Ok(make_permuted_sequences(Arc::new(images), &spec)?)
    };
    let train = load(MNIST_FILES[0], MNIST_FILES[1], cfg.data.train_count)?;
    let test = load(MNIST_FILES[2], MNIST_FILES[3], cfg.data.test_count)?;
    let seq_len = match mode {
        MnistMode::Pixel => MNIST_PIXELS,
        MnistMode::Line { black_lines } => MNIST_SIDE + black_lines,
    };
    Ok(TaskData { train, test, seq_len })
}

/// Generate (or load) the datasets of a supervised task for one seed.
pub fn task_data(cfg: &ExperimentConfig, seed: u64) -> Result<TaskData, CliError> {
    let d = &cfg.data;
    let base = d.seed.wrapping_add(2 * seed);
    match cfg.task {
        Task::Copy => {
            let gen = |count, seed| gen_copy_first_input(&CopyFirstInputSpec { length: d.length, count, seed });
            Ok(TaskData {
                train: gen(d.train_count, base)?,
                test: gen(d.test_count, base + 1)?,
                seq_len: d.length,
            })
        }
        Task::Denoise => {
            let gen = |count, seed| {
                gen_denoising(&DenoisingSpec {
                    length: d.length,
                    forget: d.forget,
                    count,
                    seed,
                })
            };
            Ok(TaskData {
                train: gen(d.train_count, base)?,
                test: gen(d.test_count, base + 1)?,
                seq_len: d.length,
            })
        }
        Task::Pmnist => mnist_sets(cfg, MnistMode::Pixel),
        Task::Plmnist => mnist_sets(
            cfg,
            MnistMode::Line {
                black_lines: d.black_lines,
            },
        ),
        other => Err(CliError::Validation(format!(
            "task: `{other:?}` has no supervised dataset"
        ))),
    }
}

pub fn seed_dir(out: &Path, seed: u64) -> Result<PathBuf, CliError> {
    let dir = out.join(format!("seed-{seed}"));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("creating {}: {e}", dir.display())))?;
    Ok(dir)
}

/// Write a CSV document; a document with no data rows is refused and no
/// file is created.
pub fn emit_csv(path: &Path, csv: &str) -> Result<(), CliError> {
    if csv.lines().count() < 2 {
        return Err(CliError::Runtime(format!("refusing to write empty trace {}", path.display())));
    }
    std::fs::write(path, csv).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

fn warmup_config(w: &WarmupConfig, available: usize) -> WarmupConfig {
    WarmupConfig {
        batch_size: w.batch_size.min(available),
        ..w.clone()
    }
}

fn probe_csv(rows: &[ProbeRow]) -> String {
    let mut s = String::from(ProbeRow::HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

/// Warm up (per the configured mode) and train on a supervised task.
pub fn run_train(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<SeedMetrics, CliError> {
    let data = task_data(cfg, seed)?;
    let spec = cfg.network_spec(data.train.input_dim(), data.train.loss.output_dim(), data.seq_len);
    let mut params = NetworkParams::init(&spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train_idx, val_idx) = data.train.split(cfg.train.validation_fraction, seed)?;
    let dir = seed_dir(out, seed)?;
    let mut m = SeedMetrics::new(seed);

    if cfg.network.warmup != WarmupMode::None {
        let subset = TrainSubset {
            data: &data.train,
            indices: &train_idx,
        };
        let trace = warmup(&subset, &mut params, &warmup_config(&cfg.warmup, train_idx.len()), &mut rng)?;
        if !trace.rows.is_empty() {
            emit_csv(&dir.join("warmup.csv"), &trace.to_csv())?;
        }
        for l in 0..spec.layers.len() {
            m.set(&format!("warmup_vaa_star_layer{l}"), trace.layer_series(l).last().copied());
        }
    }

    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let outcome = train_supervised(
        &data.train,
        &train_idx,
        &val_idx,
        Some(&data.test),
        &mut params,
        &train_cfg,
        &mut rng,
    )?;
    let trace = &outcome.trace;
    if !trace.rows.is_empty() {
        emit_csv(&dir.join("trace.csv"), &trace.to_csv())?;
    }
    params.save(&dir.join("checkpoint.json"))?;
    m.set("final_train_loss", trace.last_loss(Split::Train));
    m.set("final_validation_loss", trace.last_loss(Split::Validation));
    m.set("final_test_loss", trace.last_loss(Split::Test));
    m.set(
        "final_test_accuracy",
        trace.split(Split::Test).last().and_then(|r| r.accuracy),
    );
    let vaa = trace.vaa_series();
    m.set("final_vaa", vaa.last().copied());
    m.set("max_vaa", vaa.iter().copied().reduce(f64::max));
    m.aborted = outcome.aborted;
    Ok(m)
}

fn exploration_histories(cfg: &ExperimentConfig, seed: u64) -> Result<ReplayBuffer, CliError> {
    let env = TMaze::new(&TMazeConfig::new(cfg.maze.length)?)?;
    let horizon = cfg.drqn.horizon.unwrap_or_else(|| default_horizon(cfg.maze.length));
    let mut buffer = ReplayBuffer::new(cfg.drqn.capacity)?;
    let n = ((cfg.drqn.prefill_fraction * cfg.drqn.capacity as f64).round() as usize).max(1);
    drqn::prefill(&env, &mut buffer, n, horizon, &mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok(buffer)
}

fn tmaze_params(cfg: &ExperimentConfig, seed: u64) -> Result<NetworkParams, CliError> {
    let horizon = cfg.drqn.horizon.unwrap_or_else(|| default_horizon(cfg.maze.length));
    let spec = cfg.network_spec(HISTORY_INPUT, NUM_ACTIONS, horizon);
    Ok(NetworkParams::init(&spec, seed)?)
}

/// DRQN on the T-Maze.
pub fn run_rl(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<SeedMetrics, CliError> {
    if cfg.task != Task::Tmaze {
        return Err(CliError::Validation("task: `rl` needs task = \"tmaze\"".into()));
    }
    let mut params = tmaze_params(cfg, seed)?;
    let mut drqn_cfg = cfg.drqn.clone();
    if cfg.network.warmup != WarmupMode::None {
        drqn_cfg.warmup = Some(cfg.warmup.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outcome = drqn::train_drqn(&TMazeConfig::new(cfg.maze.length)?, &mut params, &drqn_cfg, &mut rng)?;
    let dir = seed_dir(out, seed)?;
    if !outcome.trace.rows.is_empty() {
        emit_csv(&dir.join("trace.csv"), &outcome.trace.to_csv())?;
    }
    if let Some(w) = outcome.warmup.as_ref().filter(|w| !w.rows.is_empty()) {
        emit_csv(&dir.join("warmup.csv"), &w.to_csv())?;
    }
    params.save(&dir.join("checkpoint.json"))?;
    let mut m = SeedMetrics::new(seed);
    m.set("optimal_episode", outcome.optimal_episode.map(|e| e as f64));
    let last = outcome.trace.rows.last();
    m.set("final_smoothed_return", last.map(|r| r.smoothed_return));
    m.set(
        "final_eval_return",
        outcome.trace.rows.iter().rev().find_map(|r| r.eval_return),
    );
    m.set("episodes_run", Some(outcome.trace.rows.len() as f64));
    m.set(
        "final_vaa",
        outcome.trace.rows.iter().rev().find_map(|r| r.vaa),
    );
    m.aborted = outcome.aborted;
    Ok(m)
}

/// Warmup alone, with VAA probes before and after.
pub fn run_warmup(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<SeedMetrics, CliError> {
    let dir = seed_dir(out, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut params, seqs): (NetworkParams, Box<dyn SeqSource>) = if cfg.task == Task::Tmaze {
        (tmaze_params(cfg, seed)?, Box::new(exploration_histories(cfg, seed)?))
    } else {
        let data = task_data(cfg, seed)?;
        let spec = cfg.network_spec(data.train.input_dim(), data.train.loss.output_dim(), data.seq_len);
        (NetworkParams::init(&spec, seed)?, Box::new(data.train))
    };
    let view = seqs.view();
    let probe_cfg = &cfg.train.probe;
    let mut rows = vaa::probe(&*view, &params, probe_cfg, cfg.train.probe_set_size, 0, &mut rng)?;
    let trace = warmup(&*view, &mut params, &warmup_config(&cfg.warmup, view.count()), &mut rng)?;
    let after = vaa::probe(&*view, &params, probe_cfg, cfg.train.probe_set_size, cfg.warmup.steps, &mut rng)?;
    let mut m = SeedMetrics::new(seed);
    m.set("vaa_before", Some(rows[0].vaa));
    m.set("vaa_after", Some(after[0].vaa));
    for l in 0..params.spec.layers.len() {
        m.set(&format!("warmup_vaa_star_layer{l}"), trace.layer_series(l).last().copied());
    }
    rows.extend(after);
    if !trace.rows.is_empty() {
        emit_csv(&dir.join("warmup.csv"), &trace.to_csv())?;
    }
    emit_csv(&dir.join("probe.csv"), &probe_csv(&rows))?;
    params.save(&dir.join("checkpoint.json"))?;
    Ok(m)
}

/// One VAA probe of a fresh or loaded network.
pub fn run_probe(
    cfg: &ExperimentConfig,
    seed: u64,
    out: &Path,
    checkpoint: Option<&Path>,
) -> Result<SeedMetrics, CliError> {
    let dir = seed_dir(out, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fresh, seqs): (NetworkParams, Box<dyn SeqSource>) = if cfg.task == Task::Tmaze {
        (tmaze_params(cfg, seed)?, Box::new(exploration_histories(cfg, seed)?))
    } else {
        let data = task_data(cfg, seed)?;
        let spec = cfg.network_spec(data.train.input_dim(), data.train.loss.output_dim(), data.seq_len);
        (NetworkParams::init(&spec, seed)?, Box::new(data.train))
    };
    let params = match checkpoint {
        Some(p) => NetworkParams::load(p)?,
        None => fresh,
    };
    let view = seqs.view();
    if params.spec.input_dim != view.input_dim() {
        return Err(CliError::Validation(format!(
            "checkpoint input width {} does not match the task input width {}",
            params.spec.input_dim,
            view.input_dim()
        )));
    }
    let rows = vaa::probe(&*view, &params, &cfg.train.probe, cfg.train.probe_set_size, 0, &mut rng)?;
    emit_csv(&dir.join("probe.csv"), &probe_csv(&rows))?;
    let mut m = SeedMetrics::new(seed);
    m.set("vaa", Some(rows[0].vaa));
    m.set("vaa_star", rows[0].vaa_star);
    Ok(m)
}

/// Owner of a sequence collection that may borrow from itself.
trait SeqSource {
    fn view(&self) -> Box<dyn Sequences + '_>;
}

impl SeqSource for Dataset {
    fn view(&self) -> Box<dyn Sequences + '_> {
        Box::new(DatasetView(self))
    }
}

impl SeqSource for ReplayBuffer {
    fn view(&self) -> Box<dyn Sequences + '_> {
        Box::new(Histories::of_buffer(self, false))
    }
}

struct DatasetView<'a>(&'a Dataset);

impl Sequences for DatasetView<'_> {
    fn count(&self) -> usize {
        self.0.count()
    }

    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }

    fn seq_len(&self, i: usize) -> usize {
        self.0.seq_len(i)
    }

    fn fill_step(&self, i: usize, t: usize, out: &mut [f64]) {
        self.0.fill_step(i, t, out)
    }
}

/// Run `f` for every seed of the config and collect the metrics.
pub fn for_each_seed(
    cfg: &ExperimentConfig,
    mut f: impl FnMut(u64) -> Result<SeedMetrics, CliError>,
) -> Result<Vec<SeedMetrics>, CliError> {
    let mut out = Vec::with_capacity(cfg.seeds.len());
    for &s in &cfg.seeds {
        out.push(f(s)?);
    }
    Ok(out)
}
