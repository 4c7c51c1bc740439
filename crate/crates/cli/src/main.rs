use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lagreg_cli::{cmd_analyze, cmd_regularize, cmd_simulate, configure_threads, to_json, write_csv, CliError, ExitStatus};
use lagreg_core::catalog::{Scenario, SCENARIO_NAMES};
use lagreg_core::config::RunConfig;

#[derive(Parser)]
#[command(name = "lagreg", version, about = "Diagnostics, regularization and simulation of singular Lagrangian systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Kernel ranks, complete-lift verdict, constraints and consistency.
    Analyze(RunArgs),
    /// Build the regularized Lagrangian and verify it.
    Regularize(RunArgs),
    /// Integrate the (regularized) dynamics and write a CSV trajectory.
    Simulate(RunArgs),
    /// Print the built-in scenario names.
    ListScenarios,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in scenario (overrides the config's `scenario`).
    #[arg(long)]
    scenario: Option<String>,
    /// Sampling seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for the report and trajectory files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Proceed when the regularization hypothesis is violated.
    #[arg(long)]
    force: bool,
}

fn config_error(message: impl Into<String>) -> CliError {
    CliError { status: ExitStatus::Config, message: message.into() }
}

fn load(args: &RunArgs) -> Result<(Scenario, Option<PathBuf>), CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(name) = &args.scenario {
        cfg.scenario = Some(name.clone());
    }
    if cfg.scenario.is_none() && cfg.chart.is_none() {
        return Err(config_error("give --scenario or --config"));
    }
    if let Some(seed) = args.seed {
        cfg.sampling = Some(cfg.sampling.take().unwrap_or_default().with_seed(seed));
    }
    let out = args.out.clone().or_else(|| cfg.output.as_ref().and_then(|o| o.dir.clone()).map(PathBuf::from));
    Ok((cfg.resolve()?, out))
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).and_then(|_| std::fs::write(dir.join(name), contents)).map_err(|e| config_error(format!("{}: {e}", dir.join(name).display())))
}

fn emit(json: &str, out: &Option<PathBuf>, name: &str) -> Result<(), CliError> {
    print!("{json}");
    if let Some(dir) = out {
        write_file(dir, name, json.as_bytes())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitStatus, CliError> {
    configure_threads()?;
    match cli.command {
        Command::ListScenarios => {
            for name in SCENARIO_NAMES {
                println!("{name}");
            }
            Ok(ExitStatus::Success)
        }
        Command::Analyze(args) => {
            let (scn, out) = load(&args)?;
            emit(&to_json(&cmd_analyze(&scn)?), &out, "analyze.json")?;
            Ok(ExitStatus::Success)
        }
        Command::Regularize(args) => {
            let (scn, out) = load(&args)?;
            let report = cmd_regularize(&scn, args.force)?;
            emit(&to_json(&report), &out, "regularize.json")?;
            Ok(report.status())
        }
        Command::Simulate(args) => {
            let (scn, out) = load(&args)?;
            let sim = cmd_simulate(&scn, args.force)?;
            emit(&to_json(&sim.summary), &out, "simulate.json")?;
            if let Some(dir) = &out {
                let mut buf = Vec::new();
                write_csv(&sim.trajectory, &sim.summary.coordinates, &mut buf).map_err(|e| config_error(e.to_string()))?;
                write_file(dir, "trajectory.csv", &buf)?;
            }
            Ok(ExitStatus::Success)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(status) => ExitCode::from(status as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.status as u8)
        }
    }
}
