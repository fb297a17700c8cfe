//! Dataset IO, experiment orchestration and machine-readable reports for
//! `aloo-core`. The `aloo` binary is a thin clap front end over this crate.

pub mod config;
pub mod experiments;
pub mod io;
pub mod report;
pub mod seed;

pub use config::{DataSource, Experiment, ExperimentConfig, LambdaRule, Method};
pub use experiments::run_experiment;
pub use io::{load_dataset, Format};
pub use report::{emit_report, read_report, RunReport};
pub use seed::derive_seed;
