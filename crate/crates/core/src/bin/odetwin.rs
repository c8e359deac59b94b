use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use odetwin::experiment::{run, Command, ErrorKind, ExperimentConfig, RunError, RunOptions};
use odetwin::par::Parallelism;

/// Neural-ODE digital twins and analogue crossbar emulation.
///
/// Exit codes: 0 success, 2 invalid config or missing input, 3 I/O error,
/// 4 stale artifact (hash mismatch), 5 error inside a numerical module.
#[derive(Parser)]
#[command(name = "odetwin", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate reference trajectories.
    Simulate(Common),
    /// Train the neural-ODE twin.
    Train(Common),
    /// Score the twin on interpolation and extrapolation data.
    Eval(Common),
    /// Score the twin through the emulated crossbars.
    HwEval(Common),
    /// Sweep read and programming noise.
    NoiseSweep(Common),
    /// Train and score the ResNet or recurrent baselines.
    Baseline(Common),
    /// Project speed and energy per platform.
    Project(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; falls back to the config, then ODETWIN_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps and baseline fan-out; 1 runs sequentially.
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Eval(a) => (Command::Eval, a),
        Cmd::HwEval(a) => (Command::HwEval, a),
        Cmd::NoiseSweep(a) => (Command::NoiseSweep, a),
        Cmd::Baseline(a) => (Command::Baseline, a),
        Cmd::Project(a) => (Command::Project, a),
    };
    match execute(command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("odetwin {}: {e}", command.name());
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(command: Command, args: Common) -> Result<(), RunError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os("ODETWIN_OUT").map(PathBuf::from))
        .ok_or_else(|| RunError::new(ErrorKind::Config, "no output directory: pass --out, set output_dir or ODETWIN_OUT"))?;
    let mode = match args.workers {
        Some(1) => Parallelism::Sequential,
        _ => Parallelism::Parallel,
    };
    if args.workers == Some(0) {
        return Err(RunError::new(ErrorKind::Config, "--workers must be at least 1"));
    }
    let summary = run(command, &cfg, &RunOptions { out: out.clone(), mode, workers: args.workers })?;
    eprintln!("odetwin {}: {}", command.name(), summary.message);
    eprintln!("wrote {} file(s) to {}", summary.written.len(), out.display());
    Ok(())
}
