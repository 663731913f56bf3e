use std::process::ExitCode;

use clap::Parser;

use ccfcnet::cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ccfcnet {}: {e}", cli.command.name());
            ExitCode::from(e.code)
        }
    }
}
