//! Command-line driver: preparation reports, pulse synthesis, echo series and
//! LDOS curves, each stage writing plain-text tables into `--out`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fermi_echo::lattice::PairKind;
use fermi_echo::propagate::Sign;

use commands::{Context, Outcome};
use config::{ConfigError, EchoMode, RunConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_FLOOR: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "fermi-echo", version, about = "Plaquette Loschmidt-echo simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the configured echo mode.
    #[arg(long, global = true, value_enum)]
    mode: Option<EchoMode>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Validate the configuration and stop.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Keep existing pulse files whose recorded settings match.
    #[arg(long, global = true)]
    reuse: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    Prepare,
    OptimizePulse,
    Echo,
    Ldos,
    /// All stages in order; pulse files are reused when their settings match.
    Pipeline,
}

fn load(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let path = cli.config.as_ref().ok_or(ConfigError::Field { field: "--config", msg: "required".into() })?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(m) = cli.mode {
        cfg.echo.mode = m;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Exit code for an error coming out of a stage.
fn classify(err: &anyhow::Error) -> u8 {
    use fermi_echo::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::FidelityFloor { .. } | E::MissingPulse(_) => EXIT_FLOOR,
                E::KrylovNonConvergence { .. }
                | E::NormUnderflow
                | E::NormDrift { .. }
                | E::NonPositiveAmplitude(_) => EXIT_NUMERIC,
                E::InvalidArgument(_) | E::SectorMismatch(_) | E::MissingTiling(_) | E::GridMismatch(_) => EXIT_CONFIG,
                _ => 1,
            };
        }
    }
    1
}

fn report(outcome: &Outcome) {
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    for p in &outcome.reused {
        println!("reused  {}", p.display());
    }
    for p in &outcome.written {
        println!("wrote   {}", p.display());
    }
}

fn report_floor(misses: &[(PairKind, Sign, f64)], floor: f64) -> ExitCode {
    if misses.is_empty() {
        return ExitCode::SUCCESS;
    }
    for (kind, sign, f) in misses {
        eprintln!("error: pulse {kind} {sign} reached fidelity {f:.6}, below the floor {floor}");
    }
    ExitCode::from(EXIT_FLOOR)
}

fn run(cli: &Cli, cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let ctx = Context { cfg, reuse: cli.reuse || matches!(cli.command, Command::Pipeline) };
    let floor = cfg.pulse.fidelity_floor;
    match cli.command {
        Command::Prepare => report(&commands::cmd_prepare(&ctx)?),
        Command::OptimizePulse => {
            let run = commands::cmd_optimize_pulse(&ctx)?;
            report(&run.outcome);
            return Ok(report_floor(&run.below_floor, floor));
        }
        Command::Echo => report(&commands::cmd_echo(&ctx, None)?),
        Command::Ldos => report(&commands::cmd_ldos(&ctx)?),
        Command::Pipeline => {
            let (outcome, misses) = commands::cmd_pipeline(&ctx)?;
            report(&outcome);
            return Ok(report_floor(&misses, floor));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if cli.dry_run {
        println!("config ok, hash {}", cfg.hash());
        return ExitCode::SUCCESS;
    }
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("cannot size the worker pool: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match run(&cli, &cfg) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e))
        }
    }
}
