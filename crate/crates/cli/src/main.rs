use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use simhammer_cli::config::ExperimentConfig;
use simhammer_cli::experiments;

#[derive(Parser)]
#[command(
    name = "simhammer",
    version,
    about = "Deterministic simulator of speculative-execution-driven DRAM disturbance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (`key = value`; `include = t420|desk|<path>`)
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed from the configuration file
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $SIMHAMMER_OUT, then ./out)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate the training count and drain length, report the round cost
    Calibrate(RunArgs),
    /// Speculative-access success rate with draining off and on
    Fig2(RunArgs),
    /// Virtual time to the first bit flip as the per-hammer cost grows
    Fig3a(RunArgs),
    /// Distribution of per-round costs under timing jitter
    Fig3b(RunArgs),
    /// Scan the configured memory region for vulnerable row pairs
    Scan(RunArgs),
    /// Full pipeline: calibrate, scan, hammer until the first flip
    Attack(RunArgs),
}

type CommandFn = fn(&ExperimentConfig, &Path) -> anyhow::Result<String>;

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let (args, run): (&RunArgs, CommandFn) = match &cli.command {
        Command::Calibrate(a) => (a, experiments::cmd_calibrate),
        Command::Fig2(a) => (a, experiments::cmd_fig2),
        Command::Fig3a(a) => (a, experiments::cmd_fig3a),
        Command::Fig3b(a) => (a, experiments::cmd_fig3b),
        Command::Scan(a) => (a, experiments::cmd_scan),
        Command::Attack(a) => (a, experiments::cmd_attack),
    };
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| std::env::var_os("SIMHAMMER_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out)?;
    let started = Instant::now();
    let summary = run(&cfg, &out)?;
    println!("{summary}");
    // Wall time goes to the console only; output files stay byte-identical
    // across hosts and runs.
    println!("wall time: {:.3} s", started.elapsed().as_secs_f64());
    Ok(())
}
