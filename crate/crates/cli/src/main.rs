use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use superfilter::{Error, ErrorKind};

mod commands;
mod config;
mod manifest;

use config::{CompareArgs, DiversifyArgs, ReportArgs, ScoreArgs, SelectArgs};

#[derive(Parser)]
#[command(name = "superfilter", version, about = "IFD-based instruction data selection")]
struct Cli {
    /// TOML file with per-command defaults ([score], [select], ...); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Log verbosity (-v debug, -vv trace). RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute conditional/unconditional perplexity and IFD for every sample.
    Score(ScoreArgs),
    /// Keep the top-IFD fraction below the cap and write the subset.
    Select(SelectArgs),
    /// Rank correlation and selection overlap between two score files.
    Compare(CompareArgs),
    /// IFD pre-filter followed by facility-location compression.
    Diversify(DiversifyArgs),
    /// Quantile summaries and verb-noun tables for a scored dataset.
    Report(ReportArgs),
}

fn exit_code(err: &Error) -> u8 {
    match err.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Backend => 3,
        ErrorKind::Data => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();

    let result = config::FileConfig::load(cli.config.as_deref()).and_then(|file| match cli.command {
        Command::Score(args) => commands::score(args.resolve(file.score)?),
        Command::Select(args) => commands::select(args.resolve(file.select)?),
        Command::Compare(args) => commands::compare(args.resolve(file.compare)?),
        Command::Diversify(args) => commands::diversify(args.resolve(file.diversify)?),
        Command::Report(args) => commands::report(args.resolve(file.report)?),
    });

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
