use std::process::ExitCode;

fn main() -> ExitCode {
    mulm_cli::run(std::env::args_os())
}
