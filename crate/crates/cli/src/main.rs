use std::process::ExitCode;

use btpnn_cli::{execute, Command};
use clap::Parser;

#[derive(Parser)]
#[command(name = "btpnn", version, about = "Bayesian tensor product neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors count as invalid input; --help and --version exit 0
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&cli.command) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            if let Some(m) = outcome.manifest {
                println!("manifest: {}", m.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
