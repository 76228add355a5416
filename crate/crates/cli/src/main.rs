//! `chronos` — run reproducible time-of-flight experiments from scenario
//! files: CSI sweep simulation, sparse inverse-NDFT ToF recovery, 2D
//! localization, hop-protocol timing, follow-controller runs, and
//! calibration.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use chronos_core::experiment::{run, ExperimentKind, ExperimentSpec};

#[derive(Parser)]
#[command(
    name = "chronos",
    about = "Multi-band Wi-Fi time-of-flight experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time-of-flight accuracy trials (per-trial estimates + summary).
    Tof(RunArgs),
    /// One multipath profile dump (tau_ns, magnitude, phase).
    Profile(RunArgs),
    /// 2D localization trials against anchor geometry.
    Localize(RunArgs),
    /// Channel-hopping sweep timing trials.
    Sweep(RunArgs),
    /// Closed-loop follow-distance controller runs.
    Follow(RunArgs),
    /// Estimate the constant ToF offset and kappa at a known distance.
    Calibrate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario's trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the scenario's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSV artifacts and summary.json.
    #[arg(long)]
    out: PathBuf,
    /// Scenario override as dotted.path=value (repeatable),
    /// e.g. --config-override solver.alpha_scale=0.01
    #[arg(long = "config-override", value_name = "KEY=VALUE")]
    config_override: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Tof(a) => (ExperimentKind::Tof, a),
        Command::Profile(a) => (ExperimentKind::Profile, a),
        Command::Localize(a) => (ExperimentKind::Localize, a),
        Command::Sweep(a) => (ExperimentKind::Sweep, a),
        Command::Follow(a) => (ExperimentKind::Follow, a),
        Command::Calibrate(a) => (ExperimentKind::Calibrate, a),
    };
    match execute(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("bounds violated; see summary.json");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(kind: ExperimentKind, args: &RunArgs) -> anyhow::Result<bool> {
    let overrides = args
        .config_override
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .with_context(|| format!("override {kv:?} is not KEY=VALUE"))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let spec = ExperimentSpec {
        scenario_path: args.scenario.clone(),
        kind,
        trials: args.trials,
        seed: args.seed,
        out_dir: args.out.clone(),
        overrides,
    };
    let report = run(&spec).with_context(|| format!("{} experiment failed", kind.as_str()))?;
    println!("{}", serde_json::to_string_pretty(&report.summary)?);
    Ok(report.bounds_ok)
}
