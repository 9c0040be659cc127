use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use langevin_lab::{run, CliError, Command, ExperimentConfig};

/// Langevin Monte Carlo experiments.
#[derive(Debug, Parser)]
#[command(name = "langevin-lab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Directory for CSV tables and report.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = std::fs::read_to_string(&cli.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", cli.config.display())))
        .and_then(|text| ExperimentConfig::from_json(&text))
        .and_then(|mut config| {
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            let out = cli.out.clone().or_else(|| config.output.clone());
            run(cli.command, config, out.as_deref())
        });
    match result {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("reports serialize"));
            for a in report.assertions.iter().filter(|a| !a.passed) {
                eprintln!("failed: {} ({}; lhs = {}, rhs = {})", a.name, a.inequality, a.lhs, a.rhs);
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
