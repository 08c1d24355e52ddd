use std::process::ExitCode;

use calasso::runner::cli;

fn main() -> ExitCode {
    let parsed = match cli::parse(std::env::args_os().collect()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match cli::dispatch(parsed, &mut std::io::stdout().lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("calasso: {e}");
            ExitCode::FAILURE
        }
    }
}
