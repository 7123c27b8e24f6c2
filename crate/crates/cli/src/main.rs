use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    if let Some(n) = std::env::var("KP_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        kp_core::par::configure_threads(n);
    }
    let cli = kp_cli::Cli::parse();
    match kp_cli::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("kp: {e}");
            ExitCode::from(e.code())
        }
    }
}
