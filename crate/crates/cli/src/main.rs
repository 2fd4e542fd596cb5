use std::process::ExitCode;

fn main() -> ExitCode {
    uniisp_cli::run(std::env::args_os())
}
