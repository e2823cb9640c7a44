use std::path::PathBuf;
use std::process::ExitCode;

use ccmpc_cli::{cmd_bench, cmd_run, cmd_synthesize, cmd_verify, Options};
use clap::{Parser, Subcommand};

/// Contraction-constrained multi-timescale MPC.
///
/// Worker threads are taken from CCMPC_WORKERS (default 1).
#[derive(Parser)]
#[command(name = "ccmpc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file.
    #[arg(long, global = true, default_value = "configs/coupled_tank.toml")]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the scenario.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize and verify certificates, writing one file per timescale.
    Synthesize,
    /// Verify existing certificates on the dense grid.
    Verify,
    /// Closed-loop run; writes trace.csv and a gnuplot script.
    Run,
    /// Time the configured variants; writes benchmark.csv.
    Bench,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = Options {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        quiet: cli.quiet,
    };
    let result = match cli.command {
        Command::Synthesize => cmd_synthesize(&opts).map(|_| ()),
        Command::Verify => cmd_verify(&opts).map(|_| ()),
        Command::Run => cmd_run(&opts).map(|_| ()),
        Command::Bench => cmd_bench(&opts).map(|_| ()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
