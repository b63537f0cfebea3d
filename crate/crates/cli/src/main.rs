//! `disca` batch front end.
//!
//! Every command computes its artifacts in memory and only then writes them
//! into `--out`, so a failing run leaves no partial files behind. Failures are
//! reported as one JSON line on stderr with a non-zero exit code.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use disca::eval::AmceScale;
use disca::model::{validate_config, TemperatureMode};
use disca::ControllerConfig;
use serde_json::json;

use crate::output::{CliError, Outputs};

#[derive(Debug, Parser)]
#[command(name = "disca", version, about = "Persona-panel logit correction: batch runs, simulation and verification")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Controller configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Also write per-scenario correction traces (run and simulate).
    #[arg(long, global = true)]
    trace: bool,
    /// Overrides the configuration's temperature mode.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    PerAttributeTemp,
    UniformTemp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScaleArg {
    /// Proportions in [0, 1].
    Unit,
    /// Raw effects in [-1, 1].
    Raw,
    /// Percentages in [0, 100].
    Percent,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Correct a panel file and score each country against human AMCEs.
    Run {
        /// Panel records, one JSON object per line.
        #[arg(long)]
        panel: PathBuf,
        /// Human AMCE table with columns country,attribute,amce.
        #[arg(long)]
        human: PathBuf,
        /// Scale of the human AMCE table.
        #[arg(long, value_enum)]
        amce_scale: ScaleArg,
    },
    /// Compare methods on synthetic populations.
    Simulate {
        /// Population spec (one JSON object or an array); built-ins otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Comma-separated method names; all methods otherwise.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// Vary one hyperparameter over a grid.
    Sweep {
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        grid: Vec<f64>,
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Gated versus ungated MIS under additive logit noise.
    Stress {
        /// Comma-separated noise standard deviations.
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2")]
        grid: Vec<f64>,
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Monte Carlo checks of the statistical guarantees.
    Verify {
        /// Check name, or `all`.
        #[arg(long)]
        check: String,
        /// Overrides the check's default trial count.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Ablation ladder and tail-safety comparison.
    Ablate {
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Run { .. } => "run",
            Command::Simulate { .. } => "simulate",
            Command::Sweep { .. } => "sweep",
            Command::Stress { .. } => "stress",
            Command::Verify { .. } => "verify",
            Command::Ablate { .. } => "ablate",
        }
    }
}

fn load_config(g: &GlobalArgs) -> Result<ControllerConfig, CliError> {
    let mut cfg = match &g.config {
        Some(path) => ControllerConfig::load(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?,
        None => ControllerConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.master_seed = seed;
    }
    if let Some(mode) = g.mode {
        cfg.temperature_mode = match mode {
            ModeArg::PerAttributeTemp => TemperatureMode::PerAttributeTemp,
            ModeArg::UniformTemp => TemperatureMode::UniformTemp,
        };
    }
    validate_config(cfg).map_err(|e| CliError::config(e.to_string()))
}

fn execute(cli: &Cli, started: Instant) -> Result<(), CliError> {
    let cfg = load_config(&cli.global)?;
    let trace = cli.global.trace;
    if trace && !matches!(cli.command, Command::Run { .. } | Command::Simulate { .. }) {
        return Err(CliError::usage("--trace is only supported by run and simulate"));
    }
    let mut out = Outputs::default();
    let rows = match &cli.command {
        Command::Run {
            panel,
            human,
            amce_scale,
        } => {
            let scale = match amce_scale {
                ScaleArg::Unit => AmceScale::Unit,
                ScaleArg::Raw => AmceScale::Raw,
                ScaleArg::Percent => AmceScale::Percent,
            };
            commands::run(&cfg, panel, human, scale, trace, &mut out)?
        }
        Command::Simulate { spec, methods } => {
            commands::simulate(&cfg, spec.as_deref(), methods, trace, &mut out)?
        }
        Command::Sweep { axis, grid, spec } => {
            commands::sweep(&cfg, axis, grid, spec.as_deref(), &mut out)?
        }
        Command::Stress { grid, spec } => commands::stress(&cfg, grid, spec.as_deref(), &mut out)?,
        Command::Verify { check, trials } => commands::verify(&cfg, check, *trials, &mut out)?,
        Command::Ablate { spec } => commands::ablate(&cfg, spec.as_deref(), &mut out)?,
    };
    let summary = json!({
        "command": cli.command.name(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.master_seed,
        "mode": cfg.temperature_mode,
        "wall_time_ms": started.elapsed().as_millis() as u64,
        "rows_written": rows,
    });
    out.add("summary.json", format!("{summary}\n").into_bytes());
    out.commit(&cli.global.out)
}

fn main() -> ExitCode {
    let started = Instant::now();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let text: Vec<&str> = msg
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
                .filter(|l| !l.is_empty())
                .collect();
            return CliError::usage(text.join(" ").trim_start_matches("error: ")).report();
        }
    };
    match execute(&cli, started) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
