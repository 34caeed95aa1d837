use clap::{Parser, Subcommand};
use migrsim::{execute_run, execute_verify_fig6, RunFlags};
use std::path::PathBuf;

/// Scenario-driven batch runner for a simulated reliable-connection RDMA
/// transport with live endpoint migration.
#[derive(Parser)]
#[command(name = "migrsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and report statistics and assertion results.
    Run {
        /// Path to the scenario file (TOML; see docs/scenario.md).
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the packet trace to this path (see docs/trace.md).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write run statistics to this path.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Write the per-QP state timeline to this path.
        #[arg(long)]
        timeline: Option<PathBuf>,
        /// Override the scenario's tick budget.
        #[arg(long)]
        max_ticks: Option<u64>,
        /// Enable or disable the scenario's migration triggers.
        #[arg(long)]
        migration_enabled: Option<bool>,
    },
    /// Run the built-in connection-resume golden check: resume PSN 5,
    /// ack 6, retransmit 7, transmit 8 and 9, final ack.
    VerifyFig6 {
        /// Write the produced packet trace to this path.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { scenario, seed, trace, stats, timeline, max_ticks, migration_enabled } => {
            let flags = RunFlags { seed, trace, stats, timeline, max_ticks, migration_enabled };
            execute_run(&scenario, &flags)
        }
        Command::VerifyFig6 { trace } => execute_verify_fig6(trace.as_deref()),
    };
    std::process::exit(code);
}
