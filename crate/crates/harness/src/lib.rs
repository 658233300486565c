//! Simulation harness for `sblab-core`: configuration, data generation,
//! replicated experiments, reports and the `sblab` command line.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod generate;
pub mod report;

pub use config::ExperimentConfig;
pub use experiments::run_experiment;
pub use report::ExperimentReport;
