//! Experiment harness: run configuration, training loops, the Rosenbrock
//! trajectories, random-search tuning, bootstrapped trends and metric files.

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::data::DataError;
use crate::optim::OptimError;

mod config;
mod diag;
mod emit;
mod rosenbrock;
mod search;
mod stats;
mod train;

pub use config::{DataSource, DatasetConfig, OutputFormat, RunConfig};
pub use diag::{fisher_demo_config, fisher_diagnostic, gradcheck, random_point, FisherReport, GradcheckReport};
pub use emit::{emit, read_records};
pub use rosenbrock::{run_rosenbrock, RosenbrockPreset, Trajectory, TrajectoryPoint};
pub use search::{
    random_search, random_search_with, Dist, Halving, SearchObjective, SearchResult, SearchSpace, Sweep, TrialResult,
    BATCH_SIZES,
};
pub use stats::{align_series, bootstrap_medians, bootstrap_trend, Align, Series, Trend};
pub use train::{
    initial_params, normalization_path, run_training, MetricRecord, Normalization, RecordKind, RunOutcome, RunStatus,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

impl BenchError {
    /// Process exit code: 2 for configuration problems, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Io(_) | BenchError::Data(DataError::Io { .. }) => 3,
            _ => 2,
        }
    }
}

#[cfg(test)]
mod tests;
