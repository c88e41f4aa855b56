//! Configuration, orchestration, sweeps and result files.

pub mod config;
pub mod output;
pub mod runner;
pub mod seed;
pub mod svg;
pub mod sweep;

pub use config::{DatasetSource, ExperimentConfig, KModeChoice, LocalSettings, ModelSpec, SelfishEntry};
pub use output::{write_bundle, write_sweep};
pub use runner::{prepare, run_experiment, Federation, ResultBundle};
pub use sweep::{run_sweep, SweepCell};
