//! Experiment driver for the `lowprec` library: sweeps over one training
//! parameter at a time, written as resumable CSV, and the error-analysis
//! tables.
//!
//! Convergence speed is measured as epochs-to-threshold: the first 1-based
//! epoch whose test accuracy reaches the configured threshold (0.9 by
//! default), blank in the CSV when never reached.

pub mod config;
pub mod record;
pub mod report;
pub mod sweep;

pub use config::ExperimentConfig;
pub use record::{epochs_to_threshold, CsvRow, RunRecord, Status};
pub use sweep::{run_sweep, SweepParam, SweepSpec};
