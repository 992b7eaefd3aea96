//! Experiment configuration, parallel seed sweeps, persistence and reports.

mod config;
mod report;
mod runner;

pub use config::{ExperimentConfig, Scenario};
pub use report::{
    curves, histogram_plot, mean_histograms, mean_se, read_histograms, read_metrics, read_summary, report, summarize,
    value_plot, write_histograms, write_metrics, write_summary, HistogramRow, MetricRow, SummaryRow,
};
pub use runner::{build_env, env_seed, run_all, run_experiment, write_run_dir, WORKERS_ENV};

use crate::error::Error;

/// Process exit codes of the command-line tool.
pub mod exit_code {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NUMERIC: i32 = 3;
}

/// Exit code for an error escaping a command.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) => exit_code::CONFIG,
        Error::NumericAbort { .. } | Error::NonFinite { .. } => exit_code::NUMERIC,
        _ => exit_code::FAILURE,
    }
}
