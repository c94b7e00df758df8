use std::process::ExitCode;

use clap::Parser;
use irac_kg_cli::{run, Cli, UsageError};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let usage = e.is::<UsageError>();
            let body = serde_json::json!({
                "error": if usage { "usage" } else { "failed" },
                "message": format!("{e:#}"),
            });
            eprintln!("{body}");
            if usage {
                eprintln!("Run `irac-kg --help` for usage.");
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
