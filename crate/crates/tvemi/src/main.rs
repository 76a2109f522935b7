use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(tvemi::cli::run_from(std::env::args_os()))
}
