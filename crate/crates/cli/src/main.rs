mod commands;
mod error;
mod figure;
mod io;

use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = commands::Cli::parse();
    match commands::run(cli, &args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("svb: error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
