mod args;
mod commands;
mod error;

use clap::Parser;
use std::process::ExitCode;

use args::Cli;
use error::EXIT_CONFIG;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start the thread pool: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let name = cli.command.name();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.code == EXIT_CONFIG {
                eprintln!("\nFor usage, run `crate {name} --help`.");
            }
            ExitCode::from(e.code)
        }
    }
}
