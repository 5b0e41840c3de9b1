//! The `pipekeeper` command line and HTTP service.

pub mod api;
mod client;
mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "pipekeeper", version, about = "Policy-bounded decision control-plane for CI/CD pipelines")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write one run directory per arm.
    Run(RunArgs),
    /// Run a scenario live behind the HTTP API.
    Serve(ServeArgs),
    /// Recompute and print the metrics of a run directory.
    Report {
        run_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Re-decide a recorded ledger under other agents or policies.
    Replay {
        /// A ledger export, or a run directory holding one.
        ledger: PathBuf,
        /// Alternate policy bundle (TOML). Defaults to the run's own bundle.
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Agent version string, or a TOML file with an agent configuration.
        #[arg(long)]
        agents: Option<String>,
    },
    /// Compare a baseline and an augmented run directory.
    Ab {
        baseline: PathBuf,
        augmented: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::MarkdownTable)]
        format: Format,
    },
    /// Verify or query a ledger export.
    #[command(subcommand)]
    Ledger(LedgerCommand),
    /// Validate a policy bundle or evaluate one proposal against it.
    #[command(subcommand)]
    Policy(PolicyCommand),
    /// Trust tiers of a run directory or a live service.
    #[command(subcommand)]
    Tier(TierCommand),
    /// Engage or release the kill switch on a live service.
    Killswitch {
        #[arg(value_enum)]
        state: SwitchState,
        #[command(flatten)]
        remote: Remote,
        #[arg(long, default_value = "cli")]
        operator: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    MarkdownTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Augmented,
    Baseline,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SwitchState {
    Engage,
    Release,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario TOML file, or `canonical` for the built-in scenario.
    pub scenario: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Policy bundle TOML. Defaults to the built-in bundle.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value_t = Mode::Both)]
    pub mode: Mode,
    /// Parent directory for the run directories.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value_t = Mode::Augmented)]
    pub mode: Mode,
    #[arg(long, default_value_t = api::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
    /// Simulated seconds per wall-clock second; 0 runs as fast as possible.
    #[arg(long, default_value_t = 60.0)]
    pub realtime_factor: f64,
    /// Write the run directory here when the run finishes.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum LedgerCommand {
    /// Walk the hash chain from genesis.
    Verify { ledger: PathBuf },
    /// Print matching entries as JSON lines.
    Query {
        ledger: PathBuf,
        #[arg(long)]
        stage: Option<String>,
        /// allow, require_approval or deny (any case).
        #[arg(long)]
        outcome: Option<String>,
        #[arg(long)]
        overridden: Option<bool>,
        #[arg(long)]
        agent: Option<String>,
        #[arg(long)]
        trace: Option<String>,
        /// ISO-8601 simulated time, inclusive.
        #[arg(long)]
        from: Option<String>,
        /// ISO-8601 simulated time, exclusive.
        #[arg(long)]
        until: Option<String>,
        /// Skip audit entries.
        #[arg(long)]
        decisions_only: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum PolicyCommand {
    /// Parse and validate a bundle; prints its version and digest.
    Check { bundle: Option<PathBuf> },
    /// Evaluate one proposal (JSON) in one context (JSON).
    Eval {
        #[arg(long)]
        proposal: PathBuf,
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum TierCommand {
    /// Current tiers: from a run directory if given, else from a live service.
    Show {
        run_dir: Option<PathBuf>,
        #[command(flatten)]
        remote: Remote,
    },
}

#[derive(Debug, Args)]
pub struct Remote {
    /// Base URL of a running `pipekeeper serve`.
    #[arg(long, default_value = "http://127.0.0.1:7377")]
    pub url: String,
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 0 on success, 1 on a domain error, 2 on a usage error.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
