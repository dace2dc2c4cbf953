mod args;
mod commands;
mod input;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match &cli.command {
        Command::FitCurve(a) => commands::fit_curve(a),
        Command::Infer(a) => commands::infer(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Coverage(a) => commands::coverage(a),
        Command::Herd(a) => commands::herd_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
