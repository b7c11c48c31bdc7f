use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mte_core::cli::{run, Command, ErrorReport, RunOptions};
use mte_core::io::write_json;

/// Marginal treatment effect laboratory.
#[derive(Debug, Parser)]
#[command(name = "mte-lab", version)]
struct Args {
    /// verify, figure1, identify, thresholds, estimate or all.
    name: Option<String>,
    /// Same as the positional command.
    #[arg(long = "command", conflicts_with = "name")]
    command: Option<String>,
    /// Scenario TOML file, or `bundled:<name>`.
    #[arg(long, default_value = "bundled:figure1")]
    config: String,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (falls back to MTE_LAB_THREADS).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let name = args.name.clone().or(args.command.clone()).unwrap_or_default();
    let result = name.parse::<Command>().and_then(|c| {
        run(
            c,
            &RunOptions {
                config: args.config.clone(),
                out: args.out.clone(),
                seed: args.seed,
                threads: args.threads,
            },
        )
    });
    match result {
        Ok(m) => {
            println!("{}", serde_json::to_string_pretty(&m).expect("manifest serializes"));
            if m.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            let report = ErrorReport::new(&name, &e);
            let body = serde_json::to_string_pretty(&report).expect("report serializes");
            eprintln!("{body}");
            if std::fs::create_dir_all(&args.out).is_ok() {
                let _ = write_json(&args.out.join("error.json"), &report);
            }
            ExitCode::from(2)
        }
    }
}
