mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Flags, RunConfig};

/// Fit Laplacian-regularized stratified models.
#[derive(Parser, Debug)]
#[command(name = "stratfit", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Fit a model and write the model file
    Fit(Flags),
    /// Write one prediction row per input record
    Predict(Flags),
    /// Print the mean metric of a fitted model on a dataset
    Score(Flags),
    /// Validate a hyper-parameter grid and write the results table
    Cv(Flags),
    /// Write one row of parameters per node
    Export(Flags),
    /// Materialize a graph description as an explicit graph file
    Graph(Flags),
}

#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration.
    Usage(String),
    /// Unreadable or inconsistent inputs.
    Data(String),
    /// The solver stopped at its iteration cap; outputs were still written.
    NotConverged,
}

impl From<stratfit::Error> for Failure {
    fn from(e: stratfit::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on bad usage, which here means "not converged"
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let flags = match &cli.cmd {
        Cmd::Fit(f) | Cmd::Predict(f) | Cmd::Score(f) | Cmd::Cv(f) | Cmd::Export(f) | Cmd::Graph(f) => f,
    };
    let level = match flags.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("RUST_LOG")
        .format_timestamp(None)
        .init();

    let run = RunConfig::resolve(flags).and_then(|cfg| match cli.cmd {
        Cmd::Fit(_) => commands::fit(&cfg),
        Cmd::Predict(_) => commands::predict(&cfg),
        Cmd::Score(_) => commands::score(&cfg),
        Cmd::Cv(_) => commands::cv(&cfg),
        Cmd::Export(_) => commands::export(&cfg),
        Cmd::Graph(_) => commands::graph(&cfg),
    });
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::NotConverged) => ExitCode::from(2),
        Err(Failure::Usage(msg) | Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
