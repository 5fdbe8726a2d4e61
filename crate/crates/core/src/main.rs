use std::process::ExitCode;

fn main() -> ExitCode {
    vibrotact::cli::main_with_args(std::env::args_os())
}
