//! `pgp`: config-driven runner for learning interaction kernels.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 numerical failure,
//! 3 failed verification.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use particle_gp::accel::AccelConfig;
use particle_gp::trainer::Backend;

use config::{ExperimentConfig, IngestConfig};

#[derive(Parser, Debug)]
#[command(name = "pgp", version, about = "Learn interaction kernels of particle systems with Gaussian processes")]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `data.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the `[backend]` kind.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    /// Overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendArg {
    Exact,
    Accel,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset from the configured system.
    Simulate,
    /// Fit hyperparameters by minimizing the negative log marginal likelihood.
    Train {
        /// Dataset JSON; `<out>/dataset.json` when unset.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Kernel estimates, predicted trajectories and UQ ensembles.
    Predict {
        /// Trained model JSON; `<out>/model.json` when unset.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Dataset JSON; `<out>/dataset.json` when unset.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Gradient, GP/KRR, coercivity and covariance-identity checks.
    Verify {
        /// Trained model JSON; `<out>/model.json` when unset.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Dataset JSON; `<out>/dataset.json` when unset.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Exact versus accelerated NLML timings over a sweep.
    Bench,
    /// Build a dataset from position frames in CSV.
    Ingest {
        /// Frames file: one row per frame, agent-major coordinates.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Spatial dimension.
        #[arg(long)]
        d: Option<usize>,
        /// Moving-average window in frames.
        #[arg(long)]
        window: Option<usize>,
        /// Time between frames.
        #[arg(long)]
        dt: Option<f64>,
        /// Min-max scale each coordinate axis to [0, 1].
        #[arg(long)]
        normalize: bool,
    },
}

/// Error classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Numerical(anyhow::Error),
    Verification,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Numerical(_) => 2,
            Failure::Verification => 3,
        }
    }
}

impl From<particle_gp::Error> for Failure {
    fn from(e: particle_gp::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.into())
        } else {
            Failure::Usage(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<particle_gp::Error>() {
            Ok(inner) => inner.into(),
            Err(e) => Failure::Usage(e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.into())
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.data.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    match cli.backend {
        Some(BackendArg::Exact) => cfg.backend = Backend::Exact,
        Some(BackendArg::Accel) if matches!(cfg.backend, Backend::Exact) => {
            cfg.backend = Backend::Accelerated(AccelConfig::default())
        }
        _ => {}
    }
    Ok(cfg)
}

fn ingest_settings(cfg: &ExperimentConfig, cmd: &Command) -> anyhow::Result<IngestConfig> {
    let Command::Ingest { csv, d, window, dt, normalize } = cmd else { unreachable!() };
    let base = cfg.ingest.as_ref();
    let missing = |name: &str| anyhow::anyhow!("ingest needs --{name} (or ingest.{name} in the config)");
    Ok(IngestConfig {
        csv: csv.clone().or_else(|| base.map(|b| b.csv.clone())).ok_or_else(|| missing("csv"))?,
        d: d.or(base.map(|b| b.d)).ok_or_else(|| missing("d"))?,
        window: window.or(base.map(|b| b.window)).ok_or_else(|| missing("window"))?,
        dt: dt.or(base.map(|b| b.dt)).ok_or_else(|| missing("dt"))?,
        normalize: *normalize || base.is_some_and(|b| b.normalize),
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli).map_err(Failure::Usage)?;
    if !matches!(cli.command, Command::Ingest { .. }) {
        cfg.validate().map_err(Failure::Usage)?;
    }
    match &cli.command {
        Command::Simulate => commands::simulate_cmd(&cfg),
        Command::Train { dataset } => commands::train_cmd(&cfg, dataset.clone()),
        Command::Predict { model, dataset } => commands::predict_cmd(&cfg, model.clone(), dataset.clone()),
        Command::Verify { model, dataset } => commands::verify_cmd(&cfg, model.clone(), dataset.clone()),
        Command::Bench => commands::bench_cmd(&cfg),
        Command::Ingest { .. } => {
            let ing = ingest_settings(&cfg, &cli.command).map_err(Failure::Usage)?;
            commands::ingest_cmd(&cfg, &ing)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(e) => eprintln!("error: {e:#}"),
                Failure::Numerical(e) => eprintln!("numerical failure: {e:#}"),
                Failure::Verification => eprintln!("verification failed"),
            }
            ExitCode::from(f.code())
        }
    }
}
