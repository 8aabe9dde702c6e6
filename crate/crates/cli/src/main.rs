mod commands;
mod config;
mod explainers;

use std::process::ExitCode;

use clap::Parser;

use crate::config::{Cli, Command, RunConfig};

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::resolve(&cli.command)?;
    match cli.command {
        Command::Train(_) => commands::cmd_train(&cfg),
        Command::Explain(_) => commands::cmd_explain(&cfg),
        Command::Evaluate(_) => commands::cmd_evaluate(&cfg),
        Command::Aggregate(_) => commands::cmd_aggregate(&cfg),
        Command::Ava(_) => commands::cmd_ava(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
