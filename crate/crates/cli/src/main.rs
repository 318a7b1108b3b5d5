//! `tpsc`: operator front end for the tamper-evident sensor pipeline.
//!
//! Exit codes are part of the interface and scripts rely on them:
//!   0  success; for `verify`, the dataset is intact
//!   1  verify: intact bytes but proofs not confirmed
//!   2  verify: chunks missing or unreadable
//!   3  verify: hash or chain mismatch, tampering evident
//!   64 usage: bad flags, bad config, missing inputs
//!   70 internal failure (io trouble mid-run and the like)

mod commands;
mod config;
mod record;

use clap::{Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_INTERNAL: i32 = 70;

/// Command failure with the exit code it maps to. Verdict-carrying
/// commands (verify, extract) return their code directly instead.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Internal(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> CliError {
        CliError::Usage(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> CliError {
        CliError::Internal(msg.into())
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Internal(m) => m,
        }
    }
}

pub type CmdResult = Result<i32, CliError>;

#[derive(Parser)]
#[command(
    name = "tpsc",
    version,
    about = "Record, verify, and archive tamper-evident sensor data",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record configured sources into a hash-chained dataset
    Record(record::RecordArgs),
    /// Audit a dataset directory and report a verdict
    Verify(commands::VerifyArgs),
    /// Seal remaining samples, hash the manifest, await confirmations
    Finalize(commands::FinalizeArgs),
    /// Pack a finalized dataset into one archival bundle file
    Export(commands::ExportArgs),
    /// Unpack a bundle into a dataset directory (verifying every object)
    Extract(commands::ExtractArgs),
    /// Show manifest, proof, and chunk details
    Inspect(commands::InspectArgs),
    /// Run data-quality checks over the recorded series
    Check(commands::CheckArgs),
    /// Merge same-kind sensors onto a grid with outlier flags
    Aggregate(commands::AggregateArgs),
    /// Simulate corrupt sources: how mean and median track the truth
    Simulate(commands::SimulateArgs),
    /// Run the mock timestamping service in the foreground
    MockStamper(commands::MockStamperArgs),
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };

    let result = match cli.command {
        Command::Record(args) => record::run(args),
        Command::Verify(args) => commands::verify(args),
        Command::Finalize(args) => commands::finalize(args),
        Command::Export(args) => commands::export(args),
        Command::Extract(args) => commands::extract(args),
        Command::Inspect(args) => commands::inspect(args),
        Command::Check(args) => commands::check(args),
        Command::Aggregate(args) => commands::aggregate(args),
        Command::Simulate(args) => commands::simulate(args),
        Command::MockStamper(args) => commands::mock_stamper(args),
    };

    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("tpsc: {}", e.message());
            e.exit_code()
        }
    }
}
