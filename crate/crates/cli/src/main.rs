use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tiltmpc::nmpc::PredictionModel;
use tiltmpc_cli::commands;
use tiltmpc_cli::config::{Config, Overrides, ScenarioKind};

#[derive(Parser)]
#[command(name = "tiltmpc", version, about = "Servo-aware NMPC simulator for tiltable quadrotors")]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct RunArgs {
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Prediction model of the controller.
    #[arg(long, value_parser = ["no_servo_no_thrust", "servo_only", "servo_and_thrust"])]
    variant: Option<String>,
    /// Simulated time (s).
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Copy, Clone, ValueEnum)]
enum Speed {
    #[value(name = "1x")]
    X1,
    #[value(name = "2x")]
    X2,
}

#[derive(Copy, Clone, ValueEnum)]
enum FitKind {
    FirstOrder,
    Thrust,
}

#[derive(Subcommand)]
enum Command {
    /// Hold a hover pose (with configured disturbances).
    Hover(RunArgs),
    /// Position step, then an attitude step.
    StepPose(RunArgs),
    /// Sequence of pose targets.
    Setpoints(RunArgs),
    /// Figure-eight trajectory.
    Traj {
        #[arg(long, value_enum, default_value = "1x")]
        speed: Speed,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Step scenario with all three prediction models.
    Ablation {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Fit actuator models from a CSV log.
    Sysid {
        /// `time,command,response` for first-order, `omega,thrust` for thrust.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "first-order")]
        kind: FitKind,
        #[arg(long, default_value = "rad")]
        units: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print (or write) the default configuration.
    WriteConfig { path: Option<PathBuf> },
}

fn overrides(a: &RunArgs) -> Overrides {
    Overrides {
        seed: a.seed,
        duration: a.duration,
        model: a.variant.as_deref().and_then(PredictionModel::from_label),
    }
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let single = |kind: ScenarioKind, a: &RunArgs| -> Result<bool> {
        let s = cfg.scenario(kind, &overrides(a))?;
        commands::run_single(&s, &a.out)
    };
    match &cli.command {
        Command::Hover(a) => single(ScenarioKind::Hover, a),
        Command::StepPose(a) => single(ScenarioKind::StepPose, a),
        Command::Setpoints(a) => single(ScenarioKind::Setpoints, a),
        Command::Traj { speed, run } => {
            let k = match speed {
                Speed::X1 => 1,
                Speed::X2 => 2,
            };
            single(ScenarioKind::Trajectory(k), run)
        }
        Command::Ablation { out, seed, duration } => {
            let ov = Overrides { seed: *seed, duration: *duration, model: None };
            commands::run_ablation(&cfg.scenario(ScenarioKind::StepPose, &ov)?, out)
        }
        Command::Sysid { input, kind, units, out } => {
            match kind {
                FitKind::FirstOrder => commands::run_sysid_first_order(input, units, out).map(|_| ())?,
                FitKind::Thrust => commands::run_sysid_thrust(input, out).map(|_| ())?,
            }
            Ok(true)
        }
        Command::WriteConfig { path } => {
            let text = Config::default().to_toml();
            match path {
                Some(p) => std::fs::write(p, text).map_err(|e| anyhow!("cannot write {}: {e}", p.display()))?,
                None => print!("{text}"),
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
