//! Command-line pipeline: split, detect, pretrain, train, baseline, eval,
//! debias, export and sweep over a shared run directory.

mod args;
mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use args::{Cli, Command};

/// Missing or inconsistent input data or upstream artifacts.
#[derive(Debug)]
pub struct DataError(pub String);

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DataError {}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<cdcgcn::Error>() {
        return match e {
            cdcgcn::Error::Config(_) => EXIT_USAGE,
            cdcgcn::Error::NonFinite(_) => EXIT_NUMERIC,
            _ => EXIT_DATA,
        };
    }
    EXIT_DATA
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Split(a) => commands::split(a),
        Command::Detect(a) => commands::detect(a),
        Command::Pretrain(a) => commands::pretrain_cmd(a),
        Command::Train(a) => commands::train(a),
        Command::Baseline(a) => commands::baseline(a),
        Command::Eval(a) => commands::eval(a),
        Command::Debias(a) => commands::debias(a),
        Command::Export(a) => commands::export(a),
        Command::Sweep(a) => commands::sweep_cmd(a),
    }
}

fn main() -> ExitCode {
    let help = config::keys_help();
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in names {
        cmd = cmd.mut_subcommand(name, |s| s.after_help(help.clone()));
    }
    let cli = match cmd.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
