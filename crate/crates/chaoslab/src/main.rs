use std::path::PathBuf;
use std::process::ExitCode;

use chaoslab::{exit, parse_config_for, AppError, ExperimentKind};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "chaoslab", version, about = "Particle systems, mean-field limits and chaos diagnostics on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the particle system and write snapshots.
    Simulate(RunArgs),
    /// Solve the mean-field equation.
    SolvePde(RunArgs),
    /// Sweep N and compare particle marginals with the mean-field limit.
    ChaosStudy(RunArgs),
    /// Audit the exponential-moment bounds of the limit-density fields.
    LdeAudit(RunArgs),
    /// Enumerate surviving index triples and check the counting bounds.
    Enumerate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (at most 2^63 - 1); overrides `seed` in the config.
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    seed: Option<u64>,
}

fn run(kind: ExperimentKind, args: RunArgs) -> Result<(), AppError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| AppError::io(&args.config, e))?;
    let mut cfg = parse_config_for(&text, Some(kind))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(format!("out_{}", kind.as_str())));
    cfg.output = Some(out.display().to_string());
    chaoslab::execute(&cfg, &out)?;
    log::info!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Simulate(a) => (ExperimentKind::Simulate, a),
        Command::SolvePde(a) => (ExperimentKind::SolvePde, a),
        Command::ChaosStudy(a) => (ExperimentKind::ChaosStudy, a),
        Command::LdeAudit(a) => (ExperimentKind::LdeAudit, a),
        Command::Enumerate(a) => (ExperimentKind::Enumerate, a),
    };
    match run(kind, args) {
        Ok(()) => ExitCode::from(exit::SUCCESS as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
