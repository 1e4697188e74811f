use std::process::ExitCode;

use clap::Parser;

use tailcut::commands::{run, Cli};

fn main() -> ExitCode {
    // clap itself exits with code 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
