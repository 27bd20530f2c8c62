//! Evaluation metrics, CSV records and the query driver behind the `detlsh`
//! binary.

pub mod metrics;
pub mod report;
pub mod selftest;

use thiserror::Error;

pub use metrics::{overall_ratio, recall, speedup};
pub use report::{config_hash, run_queries, BenchRecord, CsvSink, CSV_HEADER};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Core(#[from] detlsh::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
