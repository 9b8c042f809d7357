use clap::Parser;
use endoseg_cli::cli::{run, Cli};
use std::process::ExitCode;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(m) => {
            for f in &m.failures {
                eprintln!("warning: {}: {}", f.id, f.error);
            }
            for id in &m.unmatched {
                eprintln!("warning: unmatched id {id}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("endoseg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
