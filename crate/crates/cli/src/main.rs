//! `pyradoc` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or invalid argument, 2 I/O or image
//! decoding, 3 weights or backend failure, 4 numeric failure.

mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Inpaint(a) => commands::inpaint(a),
        Command::PredictStructure(a) => commands::predict(a),
        Command::GenMask(a) => commands::gen_mask(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Info(a) => commands::info(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<pyradoc::Error>() {
            if e.from_backend() {
                return 3;
            }
            return match e.root() {
                pyradoc::Error::InvalidArgument(_) => 1,
                pyradoc::Error::Io { .. } | pyradoc::Error::MalformedPng { .. } | pyradoc::Error::UnsupportedFormat { .. } => 2,
                pyradoc::Error::Weights(_) => 3,
                pyradoc::Error::Numeric(_) => 4,
                _ => 1,
            };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

/// One line: outer context, then causes up to the first library error, whose
/// message already carries its own chain.
fn diagnostic(err: &anyhow::Error) -> String {
    let mut parts = Vec::new();
    for cause in err.chain() {
        parts.push(cause.to_string());
        if cause.is::<pyradoc::Error>() {
            break;
        }
    }
    parts.join(": ").replace('\n', " ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", diagnostic(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}
