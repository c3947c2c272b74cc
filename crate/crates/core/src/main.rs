use std::process::ExitCode;

use trace_lab::harness::{configure_threads, parse_args, run, EXIT_USAGE};

fn main() -> ExitCode {
    let spec = match parse_args(std::env::args_os()) {
        Ok(spec) => spec,
        Err(e) => e.exit(),
    };
    if let Err(e) = configure_threads() {
        eprintln!("trace-lab: {e}");
        return ExitCode::from(EXIT_USAGE as u8);
    }
    ExitCode::from(run(&spec) as u8)
}
