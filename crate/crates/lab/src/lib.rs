//! Configuration, reports, file formats and the experiment runner behind the
//! `sandpile` command line. The numerics live in `sandpile-core`.

use std::path::PathBuf;

pub mod config;
mod probes;
pub mod report;
pub mod selftest;

pub use config::{Command, ExperimentConfig, Format, LawKind, LawSpec, ProbeParams, ScheduleKind};
pub use probes::{coefficients, parseval_limit};
pub use report::{Check, ExperimentReport, FieldDump, Table};
pub use selftest::{selftest_with, Tolerances};

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("invalid config at `{path}`: {reason}")]
    Config { path: String, reason: String },
    #[error(transparent)]
    Core(#[from] sandpile_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("write failed: {0}")]
    Stream(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Format(String),
}

impl LabError {
    pub fn is_usage(&self) -> bool {
        matches!(self, LabError::Config { .. })
    }
}

/// Resolves `config`, runs it and returns the report. Nothing is written;
/// see [`ExperimentReport::write_dir`].
pub fn run(config: ExperimentConfig) -> Result<ExperimentReport, LabError> {
    let config = config.resolve()?;
    let start = std::time::Instant::now();
    let mut report = ExperimentReport::new(config.clone());
    probes::dispatch(&config, &mut report)?;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}
