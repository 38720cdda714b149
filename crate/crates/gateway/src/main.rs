use std::io::{self, BufReader};
use std::process::ExitCode;

use clap::Parser;
use cordchat_gateway::cli::{run, Cli, Io};
use tracing_subscriber::EnvFilter;

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("CORDCHAT_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(io::stderr)
        .init();
    let stdin = io::stdin();
    let mut input = BufReader::new(stdin.lock());
    let io = Io {
        input: &mut input,
        out: &mut io::stdout().lock(),
        err: &mut io::stderr().lock(),
    };
    match run(&cli, io) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
