use std::process::ExitCode;

use clap::Parser;
use raplace_client::cli::{run, Cli, Command};
use tracing_subscriber::EnvFilter;

fn main() -> ExitCode {
    let cli = Cli::parse();
    // failures of one-shot commands already reach stderr as JSON
    let quiet = if matches!(cli.command, Command::Serve { .. }) { "info" } else { "off" };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(quiet)))
        .with_writer(std::io::stderr)
        .init();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            let body = serde_json::json!({"kind": "InternalError", "message": format!("cannot start runtime: {e}")});
            eprintln!("{body}");
            return ExitCode::FAILURE;
        }
    };
    match rt.block_on(run(cli)) {
        Ok(serde_json::Value::Null) => ExitCode::SUCCESS,
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json value"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e).expect("error body"));
            ExitCode::FAILURE
        }
    }
}
