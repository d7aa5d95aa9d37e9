//! `ensq`: run the stabilization, spectrum, Rabi and broadening scenarios and
//! write their results as CSV.

mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Command, RunConfig};

#[derive(Parser)]
#[command(name = "ensq", version, about = "Ensemble-qubit stabilization scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args)]
struct Rest {
    /// `--key value` pairs, `--config FILE`, `--out DIR`, `--threads N`, `--seed-base S`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    args: Vec<String>,
}

#[derive(Subcommand)]
enum Sub {
    /// Print the derived rates and frequencies.
    Params(Rest),
    /// Scan the low-lying spectrum across the pump frequency.
    Spectrum(Rest),
    /// Relaxation of coherent states into the qubit manifold.
    Stabilize(Rest),
    /// Driven oscillations between the qubit states.
    Rabi(Rest),
    /// Coherence of a broadened ensemble with and without protection.
    Broadening(Rest),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (cmd, rest) = match cli.command {
        Sub::Params(r) => (Command::Params, r),
        Sub::Spectrum(r) => (Command::Spectrum, r),
        Sub::Stabilize(r) => (Command::Stabilize, r),
        Sub::Rabi(r) => (Command::Rabi, r),
        Sub::Broadening(r) => (Command::Broadening, r),
    };
    let cfg = match RunConfig::resolve(cmd, &rest.args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let threads = cfg.usize("threads").unwrap_or(0);
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot set up {threads} threads: {e}");
            return ExitCode::from(3);
        }
    }
    let mut stdout = String::new();
    match commands::run(&cfg, &mut stdout) {
        Ok(paths) => {
            print!("{stdout}");
            if !paths.is_empty() {
                println!("{}", commands::display(&paths));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
