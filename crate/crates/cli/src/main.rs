use std::path::PathBuf;
use std::process::ExitCode;

use anukf::experiment::{
    run_experiment, simulate_command, train_command, ExperimentConfig, ExperimentError,
    OutageConfig,
};
use anukf::fusion::FilterKind;
use anukf::par::{parse_thread_count, with_threads, THREADS_ENV};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(
    name = "anukf",
    version,
    about = "INS/DVL fusion experiments with adaptive process noise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the base seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write clean and corrupted sensor streams for every track.
    Simulate(Common),
    /// Train the accelerometer and gyroscope regressors.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Monte Carlo evaluation of the selected filters.
    Run {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of ukf, anekf, anukf.
        #[arg(long, value_delimiter = ',')]
        filters: Option<Vec<FilterKind>>,
        #[arg(long)]
        mc_runs: Option<usize>,
        #[arg(long)]
        outage_start: Option<f64>,
        #[arg(long)]
        outage_duration: Option<f64>,
        #[arg(long)]
        accel_weights: Option<PathBuf>,
        #[arg(long)]
        gyro_weights: Option<PathBuf>,
    },
}

struct Failure {
    kind: &'static str,
    message: String,
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        Failure {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(command: Command) -> Result<serde_json::Value, Failure> {
    match command {
        Command::Simulate(common) => {
            let cfg = load(&common)?;
            let dirs = simulate_command(&cfg, &common.out)?;
            Ok(json!({ "command": "simulate", "tracks": dirs }))
        }
        Command::Train { common, epochs } => {
            let mut cfg = load(&common)?;
            if let Some(e) = epochs {
                cfg.training.epochs = e;
            }
            let s = train_command(&cfg, Some(&common.out))?;
            Ok(json!({
                "command": "train",
                "samples": s.samples,
                "accel": { "initial_loss": s.accel.initial_loss, "final_loss": s.accel.final_loss() },
                "gyro": { "initial_loss": s.gyro.initial_loss, "final_loss": s.gyro.final_loss() },
            }))
        }
        Command::Run {
            common,
            filters,
            mc_runs,
            outage_start,
            outage_duration,
            accel_weights,
            gyro_weights,
        } => {
            let mut cfg = load(&common)?;
            if let Some(f) = filters {
                cfg.filters = f;
            }
            if let Some(n) = mc_runs {
                cfg.mc_runs = n;
            }
            if outage_start.is_some() || outage_duration.is_some() {
                let base = cfg.outage.unwrap_or_default();
                cfg.outage = Some(OutageConfig {
                    start: outage_start.unwrap_or(base.start),
                    duration: outage_duration.unwrap_or(base.duration),
                });
            }
            if accel_weights.is_some() {
                cfg.adaptive.accel_weights = accel_weights;
            }
            if gyro_weights.is_some() {
                cfg.adaptive.gyro_weights = gyro_weights;
            }
            let report = run_experiment(&cfg, Some(&common.out))?;
            let failed: usize = report.summaries.iter().map(|s| s.failures.len()).sum();
            Ok(json!({
                "command": "run",
                "metrics": common.out.join("metrics.csv"),
                "failed_runs": failed,
            }))
        }
    }
}

fn fail(kind: &str, message: &str) -> ExitCode {
    eprintln!(
        "{}",
        json!({ "error": { "kind": kind, "message": message } })
    );
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim()),
    };
    let threads = match parse_thread_count(std::env::var(THREADS_ENV).ok().as_deref()) {
        Ok(t) => t,
        Err(m) => return fail("environment", &m),
    };
    match with_threads(threads, || execute(cli.command)) {
        Ok(Ok(summary)) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Ok(Err(f)) => fail(f.kind, &f.message),
        Err(m) => fail("environment", &m),
    }
}
