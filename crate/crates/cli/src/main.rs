mod args;
mod commands;
mod failure;
mod manifest;
mod svg;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use failure::Failure;

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Domain(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Trace(a) => commands::trace(a, cli.seed, &cli.out),
        Command::Analyze(a) => commands::analyze(a, cli.seed, &cli.out),
        Command::Plan(a) => commands::plan(a, cli.seed, &cli.out),
        Command::Evaluate(a) => commands::evaluate(a, cli.seed, &cli.out),
        Command::Bench(a) => commands::bench(a, cli.seed, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
