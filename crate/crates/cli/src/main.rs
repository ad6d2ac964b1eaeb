//! `milift`: synthesize data, train, sweep, ablate, evaluate and export curves.
//!
//! Exit codes: 0 when every requested run completed, 2 when some runs failed
//! but results were written, 1 on any other error.

mod args;
mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::Status;

fn run(cli: &Cli) -> anyhow::Result<Status> {
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::Synth(cmd) => commands::synth(cmd, out),
        Command::Train(cmd) => commands::train(cmd, out),
        Command::Sweep(cmd) => commands::sweep_grid(cmd, out),
        Command::Ablate(cmd) => commands::ablation(cmd, out),
        Command::Eval(cmd) => commands::eval(cmd, out),
        Command::Curve(cmd) => commands::curve(cmd, out),
    }
}

fn main() -> ExitCode {
    let argv = match config::expand(std::env::args_os().collect()) {
        Ok(argv) => argv,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::FAILURE;
        }
    };
    let cli = Cli::parse_from(argv);
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(Status::Complete) => ExitCode::SUCCESS,
        Ok(Status::Partial) => {
            eprintln!(
                "warning: some runs failed; see error.txt files under {}",
                cli.out_dir.display()
            );
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
