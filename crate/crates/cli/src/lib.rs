//! Pipeline commands behind the `ood3d` binary.
//!
//! Each `cmd_*` function is one subcommand; the binary only parses flags,
//! calls into here and maps [`CliError`] to an exit code.

mod commands;
mod config;
mod report;

use ood3d::forge::ForgeError;
use ood3d::head::HeadError;
use ood3d::io::ScanIoError;
use ood3d::matcher::MatchError;
use ood3d::metrics::MetricError;
use ood3d::scorers::ScoreError;
use ood3d::synth::SynthError;
use thiserror::Error;

pub use commands::{
    build_training_inputs, cmd_eval, cmd_forge, cmd_report, cmd_score, cmd_sweep, cmd_synth, cmd_train_head, score_scans,
    select_scans, EvalOutcome, ForgeOutput, TrainSummary,
};
pub use config::{EvalMethod, HeadPipelineConfig, SweepSpec, TrainMode};
pub use report::{ReportRow, CSV_HEADER};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("data error: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Data(_) => 4,
        }
    }
}

impl From<ScanIoError> for CliError {
    fn from(e: ScanIoError) -> Self {
        match e {
            ScanIoError::Io { .. } => CliError::Io(e.to_string()),
            ScanIoError::Config(_) => CliError::Config(e.to_string()),
            ScanIoError::Parse { .. } | ScanIoError::Schema { .. } => CliError::Data(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Config(_) => CliError::Config(e.to_string()),
            SynthError::Io(io) => io.into(),
            SynthError::Model(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<HeadError> for CliError {
    fn from(e: HeadError) -> Self {
        match e {
            HeadError::Config(_) => CliError::Config(e.to_string()),
            HeadError::Io(io) => io.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ForgeError> for CliError {
    fn from(e: ForgeError) -> Self {
        match e {
            ForgeError::Config(_) => CliError::Config(e.to_string()),
            ForgeError::Io(io) => io.into(),
            ForgeError::Head(h) => h.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::BadTemperature => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<MatchError> for CliError {
    fn from(e: MatchError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Data(e.to_string())
    }
}
