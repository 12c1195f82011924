//! Experiment orchestration: configs, data files, replications and reports.

pub mod config;
pub mod data;
pub mod experiments;
pub mod montecarlo;
pub mod report;

pub use config::{ExperimentConfig, ModelKind};
pub use data::{load_survival_csv, parse_survival_csv, random_equal_split, write_survival_csv};
pub use experiments::{
    lower_bound_row, run_baseline_experiment, run_htest_experiment, run_lower_bound_experiment, run_mle_experiment,
    run_online_experiment, run_power_experiment, run_synth, ExperimentOutput, LowerBoundRow, MleAlgorithm, TestMode,
};
pub use montecarlo::{replicate, Replicated};
pub use report::{wilson_interval, RateEstimate, ReplicationRecord, RunReport};
