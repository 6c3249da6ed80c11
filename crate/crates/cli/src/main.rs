//! Command-line pipeline for learning quadratic reduced-order models from
//! snapshot data: preprocessing, basis computation, rank reporting, training
//! with regularization selection, simulation, evaluation, and synthetic data
//! generation. Logging is controlled by the OPINF_LOG environment variable
//! (error, info, debug).

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use opinf_core::{Error, RunConfig};

#[derive(Parser)]
#[command(name = "opinf", version, about = "Quadratic reduced-order models from snapshot data")]
struct Cli {
    /// Run configuration file (key = value lines); defaults apply if omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides the config's out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for the regularization grid search.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Map native snapshots to scaled learning variables.
    Preprocess {
        #[arg(long)]
        snapshots: PathBuf,
    },
    /// Compute a POD basis from learning-variable snapshots.
    Pod {
        #[arg(long)]
        snapshots: PathBuf,
    },
    /// Report the rank needed to exceed cumulative-energy thresholds.
    RankReport {
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.985,0.990,0.995")]
        thresholds: Vec<f64>,
    },
    /// Learn reduced operators end to end with regularization selection.
    Train {
        #[arg(long)]
        snapshots: PathBuf,
        /// Sampled input signal (m x k matrix file), if the signal is not analytic.
        #[arg(long)]
        inputs: Option<PathBuf>,
        /// Solver-provided native derivative snapshots (bypasses finite differences).
        #[arg(long)]
        derivatives: Option<PathBuf>,
    },
    /// Integrate trained operators over a time range.
    Simulate {
        /// Directory holding the train artifacts.
        #[arg(long)]
        operators: PathBuf,
        #[arg(long)]
        inputs: Option<PathBuf>,
    },
    /// Compare a simulated trajectory against truth snapshots.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        /// Trajectory matrix written by simulate (times file sits next to it).
        #[arg(long)]
        trajectory: PathBuf,
        /// Directory holding the basis, scaling, and metadata.
        #[arg(long)]
        basis: PathBuf,
    },
    /// Generate a synthetic Burgers dataset with known operators.
    MakeSynthetic,
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::Preprocess { .. } => "preprocess",
            Command::Pod { .. } => "pod",
            Command::RankReport { .. } => "rank-report",
            Command::Train { .. } => "train",
            Command::Simulate { .. } => "simulate",
            Command::Evaluate { .. } => "evaluate",
            Command::MakeSynthetic => "make-synthetic",
        }
    }
}

fn load_config(cli: &Cli) -> opinf_core::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> opinf_core::Result<()> {
    let cfg = load_config(cli)?;
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    match &cli.command {
        Command::Preprocess { snapshots } => commands::preprocess(&cfg, snapshots, &out),
        Command::Pod { snapshots } => commands::pod_command(&cfg, snapshots, &out),
        Command::RankReport { snapshots, thresholds } => {
            let table = commands::rank_report(&cfg, snapshots, thresholds, &out)?;
            print!("{table}");
            Ok(())
        }
        Command::Train {
            snapshots,
            inputs,
            derivatives,
        } => commands::train(&cfg, snapshots, inputs.as_deref(), derivatives.as_deref(), &out),
        Command::Simulate { operators, inputs } => {
            commands::simulate(&cfg, operators, inputs.as_deref(), &out)
        }
        Command::Evaluate {
            truth,
            trajectory,
            basis,
        } => commands::evaluate(&cfg, truth, trajectory, basis, &out),
        Command::MakeSynthetic => commands::make_synthetic(&cfg, &out),
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        Error::OverParameterized { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("OPINF_LOG", "error"),
    )
    .format_timestamp(None)
    .init();

    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // Ignore failure if a pool is already installed.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("opinf {}: {err}", cli.command.stage());
            ExitCode::from(exit_code_for(&err))
        }
    }
}
