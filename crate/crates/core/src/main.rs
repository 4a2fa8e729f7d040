use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = c2w2c::cli::Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match c2w2c::cli::run(cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
