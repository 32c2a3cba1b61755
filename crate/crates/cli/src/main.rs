//! `psim`: generate LDS benchmarks, train predictive-state filters, and score them.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::{ConfigError, Params};

#[derive(Parser)]
#[command(
    name = "psim",
    version,
    about = "Learned filtering with predictive states"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a benchmark LDS and write model.json, train/test trajectories, and oracle metadata
    Gen(Params),
    /// Train a filter (--algo forward|dagger) on --data; writes filter.json and train_report.csv
    Train(Params),
    /// Score --model on --data; writes eval.csv with log(e/e_F) when the generating system is known
    Eval(Params),
    /// Error ratio against the oracle over a grid of training-set sizes; writes fig2.csv
    Fig2(Params),
    /// Cross-validate the configured trainer on --data; writes folds.csv and folds_summary.csv
    Folds(Params),
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Gen(p) => commands::gen::run(&p.resolve()?),
        Command::Train(p) => commands::train::run(&p.resolve()?),
        Command::Eval(p) => commands::eval::run(&p.resolve()?),
        Command::Fig2(p) => commands::fig2::run(&p.resolve()?),
        Command::Folds(p) => commands::folds::run(&p.resolve()?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
