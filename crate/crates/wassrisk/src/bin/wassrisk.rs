use std::process::ExitCode;

fn main() -> ExitCode {
    wassrisk::cli::main_entry()
}
