//! Experiment harness: JSON configs in, CSV tables and a JSON [`RunReport`] out.

pub mod commands;
pub mod config;
pub mod report;

use std::path::Path;
use std::time::Instant;

use langevin_core::LabError;
use thiserror::Error;

pub use config::{Command, ExperimentConfig};
pub use report::{Assertion, RunReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// Errors never reach an assertion, so they all map to the config-error code.
    pub fn exit_code(&self) -> i32 {
        2
    }
}

/// Runs `command`; with `out` set, tables and `report.json` are written there.
pub fn run(command: Command, config: ExperimentConfig, out: Option<&Path>) -> Result<RunReport, CliError> {
    if let Some(declared) = config.command {
        if declared != command {
            return Err(CliError::Config(format!("config declares command {declared:?} but {command:?} was requested")));
        }
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let start = Instant::now();
    let mut report = RunReport::new(command, config.clone());
    match command {
        Command::Plan => commands::plan(&config, &mut report, out),
        Command::Sample => commands::sample(&config, &mut report, out),
        Command::BiasScan => commands::bias_scan(&config, &mut report, out),
        Command::DecayCurve => commands::decay(&config, &mut report, out),
        Command::InitCheck => commands::init_check(&config, &mut report, out),
        Command::Verify => commands::verify(&config, &mut report, out),
    }?;
    report.wall_clock_s = start.elapsed().as_secs_f64();
    if let Some(dir) = out {
        report.outputs.push("report.json".into());
        let file = std::fs::File::create(dir.join("report.json"))?;
        serde_json::to_writer_pretty(file, &report).map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(report)
}
