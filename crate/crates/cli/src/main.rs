use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use ehctrl_core::config::{ConfigError, ExecutionMode};
use ehctrl_core::control::{
    control_performance_bound, required_reception_probability, PlantModel, DEFAULT_BISECTION_TOL,
};
use ehctrl_core::scheduler::SizingCheck;
use ehctrl_core::{SimConfig, SimError, Simulation};
use log::{info, warn};

mod output;
mod sweep;

use output::{write_summary_files, RunFiles};
use sweep::{run_sweep, write_sweep_csv, SweepParam};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

/// Simulates sensors on harvested energy that share a random-access channel
/// to close their control loops.
#[derive(Debug, Parser)]
#[command(name = "ehctrl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one simulation and write telemetry.
    Run(RunArgs),
    /// Print the required reception probability of each plant.
    RequiredProb(RequiredProbArgs),
    /// Vary one parameter over a grid, one summary row per point.
    Sweep(SweepArgs),
    /// Check the multiplier and battery sizing rules.
    CheckConfig(CheckArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML scenario file; the two-plant reference scenario when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured number of slots.
    #[arg(long, value_name = "N")]
    horizon: Option<u64>,
    /// Refuse to run when a sizing rule fails.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Compute per-node steps on the thread pool. Output is identical.
    #[arg(long)]
    parallel: bool,
}

#[derive(Debug, Args)]
struct RequiredProbArgs {
    /// Plants are read from this file unless --open/--closed are given.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Open-loop gain of a scalar plant.
    #[arg(long, requires = "closed")]
    open: Option<f64>,
    /// Closed-loop gain of a scalar plant.
    #[arg(long, requires = "open")]
    closed: Option<f64>,
    #[arg(long, default_value_t = 0.8)]
    rate: f64,
    #[arg(long, default_value_t = 1.0)]
    lyapunov: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = DEFAULT_BISECTION_TOL)]
    tol: f64,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum)]
    param: SweepParam,
    /// Comma-separated grid values.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    values: Vec<f64>,
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Exit nonzero when any rule fails.
    #[arg(long)]
    strict: bool,
}

enum Failure {
    Config(anyhow::Error),
    Invariant(anyhow::Error),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.into())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => Failure::Config(c.into()),
            e if e.is_invariant() => Failure::Invariant(e.into()),
            e => Failure::Other(e.into()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EHCTRL_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::RequiredProb(args) => cmd_required_prob(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::CheckConfig(args) => cmd_check_config(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Invariant(e)) => {
            eprintln!("invariant violated: {e:#}");
            ExitCode::from(EXIT_INVARIANT)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<SimConfig, Failure> {
    match path {
        Some(p) => SimConfig::load(p).map_err(|e| Failure::Config(anyhow!(e).context(p.display().to_string()))),
        None => Ok(SimConfig::paper_defaults()),
    }
}

fn print_sizing(checks: &[SizingCheck]) {
    for c in checks {
        println!("{c}");
    }
}

/// Loads, overrides and validates the scenario shared by `run` and `sweep`.
fn prepare(args: &ConfigArgs) -> Result<SimConfig, Failure> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(horizon) = args.horizon {
        config.horizon = horizon;
    }
    for c in config.validate(args.strict)? {
        warn!("sizing rule {c}");
    }
    Ok(config)
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut config = prepare(&args.config)?;
    if args.parallel {
        config.execution = ExecutionMode::Parallel;
    }
    let files = RunFiles::create(&args.out, &config)
        .with_context(|| format!("cannot write to {}", args.out.display()))?;
    info!(
        "running {} slots for {} nodes, seed {}",
        config.horizon,
        config.node_count(),
        config.seed
    );
    let summary = Simulation::new(config)?.run(files)?;
    write_summary_files(&args.out, &summary).context("cannot write summary")?;
    for n in &summary.nodes {
        println!(
            "node {}: p_required={:.4} p_tx={:.4} p_rx={:.4} p_rx_empirical={:.4} ctrl_perf={:.4} energy_balance={:.4}",
            n.node + 1,
            n.p_required,
            n.p_tx,
            n.p_rx,
            n.p_rx_empirical,
            n.ctrl_perf,
            n.energy_balance
        );
    }
    println!("violations: {}", summary.violations.total());
    Ok(())
}

fn cmd_required_prob(args: RequiredProbArgs) -> Result<(), Failure> {
    let plants: Vec<PlantModel> = match (args.open, args.closed) {
        (Some(open), Some(closed)) => vec![PlantModel::scalar(open, closed, args.noise, args.lyapunov, args.rate)
            .map_err(|e| Failure::Config(e.into()))?],
        _ => {
            let config = load_config(args.config.as_deref())?;
            config.nodes.into_iter().map(|n| n.plant).collect()
        }
    };
    for (i, plant) in plants.iter().enumerate() {
        let p = required_reception_probability(plant, args.tol).map_err(|e| Failure::Config(e.into()))?;
        println!(
            "plant {}: required reception probability {:.4} (control performance bound {})",
            i + 1,
            p,
            control_performance_bound(plant)
        );
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let config = prepare(&args.config)?;
    let points = run_sweep(&config, args.param, &args.values)?;
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let path = args.out.join("sweep.csv");
    let file = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    write_sweep_csv(BufWriter::new(file), args.param, config.node_count(), &points).context("cannot write sweep")?;
    println!("{} points written to {}", points.len(), path.display());
    let broken: Vec<String> = points
        .iter()
        .filter_map(|p| match &p.outcome {
            Err(e) if e.is_invariant() => Some(format!("{}={}: {e}", args.param.name(), p.value)),
            _ => None,
        })
        .collect();
    if !broken.is_empty() {
        return Err(Failure::Invariant(anyhow!(broken.join("; "))));
    }
    if let Some(Err(e)) = points.into_iter().map(|p| p.outcome).find(|o| o.is_err()) {
        return Err(e.into());
    }
    Ok(())
}

fn cmd_check_config(args: CheckArgs) -> Result<(), Failure> {
    let config = load_config(args.config.as_deref())?;
    let checks = config.sizing()?;
    print_sizing(&checks);
    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed == 0 {
        println!("all sizing rules hold");
        return Ok(());
    }
    println!("{failed} sizing rule(s) fail");
    if args.strict {
        return Err(Failure::Config(anyhow!("{failed} sizing rule(s) fail")));
    }
    Ok(())
}
