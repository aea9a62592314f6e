use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(tpe_cli::run(std::env::args_os()))
}
