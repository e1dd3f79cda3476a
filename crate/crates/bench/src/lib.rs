//! Synthetic workloads, recovery metrics and the experiment runner behind
//! the `bigtensor` command line.

pub mod dist_bench;
pub mod experiment;
pub mod metrics;
pub mod synth;

pub use experiment::{run_experiment, write_report, AlgorithmId, AlgorithmSpec, ExperimentConfig, Report, RunRecord};
