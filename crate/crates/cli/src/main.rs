//! `excir` command-line tool.
//!
//! Exit codes: 0 success, 1 invalid input or arguments, 2 numerical failure.

mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .any(|e| e.downcast_ref::<excir::ExcirError>().is_some_and(|x| x.is_numerical()));
    if numerical {
        2
    } else {
        1
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    match &cli.command {
        Command::Score(a) => commands::score(a),
        Command::Block(a) => commands::block(a),
        Command::Ccir(a) => commands::ccir(a),
        Command::LwCheck(a) => commands::lw_check(a),
        Command::Bootstrap(a) => commands::bootstrap(a),
        Command::Eval(a) => commands::eval(a),
        Command::SynthGen(a) => commands::synth_gen(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
