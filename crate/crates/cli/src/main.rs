use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use multistab_cli::config::ExperimentConfig;
use multistab_cli::summary::{report, Summary};
use multistab_cli::{checks, run_pipeline, CliError, Pipeline};

#[derive(Parser)]
#[command(name = "multistab", version, about = "Multistability experiments for recurrent networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config
    config: PathBuf,
    /// override a config key, e.g. `--set train.epochs=5`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// shrink sample counts, widths and epochs by this factor
    #[arg(long)]
    scale: Option<f64>,
    /// output directory (overrides `output_dir`)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Warm up a network on a task and probe its VAA before and after
    Warmup(RunArgs),
    /// Train on a supervised task (with the configured warmup mode)
    Train(RunArgs),
    /// Train a DRQN on the T-Maze
    Rl(RunArgs),
    /// Probe the VAA of a fresh or saved network
    VaaProbe {
        #[command(flatten)]
        run: RunArgs,
        /// checkpoint written by a previous run
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Check BPTT and VAA* gradients against central differences
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Tabulate the summaries of finished runs
    Report {
        /// run directories (or summary.json files)
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let mut overrides = args.set.clone();
    if let Some(s) = args.scale {
        overrides.push(format!("scale={s}"));
    }
    if let Some(o) = &args.out {
        overrides.push(format!("output_dir={}", toml::Value::String(o.display().to_string())));
    }
    Ok(ExperimentConfig::load(&args.config, &overrides)?.scaled())
}

fn pipeline(args: &RunArgs, p: Pipeline, checkpoint: Option<&PathBuf>) -> Result<(), CliError> {
    let cfg = load(args)?;
    let (summary, path) = run_pipeline(&cfg, p, checkpoint.map(|c| c.as_path()))?;
    print!("{}", report(&[(summary.task.clone(), summary)]));
    println!("summary written to {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Warmup(a) => pipeline(&a, Pipeline::Warmup, None),
        Command::Train(a) => pipeline(&a, Pipeline::Train, None),
        Command::Rl(a) => pipeline(&a, Pipeline::Rl, None),
        Command::VaaProbe { run, checkpoint } => pipeline(&run, Pipeline::Probe, checkpoint.as_ref()),
        Command::Gradcheck { seed } => {
            let mut failed = Vec::new();
            for (name, rep) in checks::standard_suite(seed)? {
                println!(
                    "{name}: max relative error {:.3e} over {} components ({})",
                    rep.max_rel_error,
                    rep.components,
                    if rep.passed() { "ok" } else { "FAILED" }
                );
                if !rep.passed() {
                    failed.push(name);
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Runtime(format!("gradient check failed: {}", failed.join(", "))))
            }
        }
        Command::Report { runs } => {
            let mut rows = Vec::new();
            for r in runs {
                let path = if r.is_dir() { r.join("summary.json") } else { r.clone() };
                rows.push((r.display().to_string(), Summary::read(&path)?));
            }
            print!("{}", report(&rows));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
