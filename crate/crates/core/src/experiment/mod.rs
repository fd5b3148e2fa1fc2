//! Experiment configuration, grid runners and result files.

pub mod config;
pub mod output;
pub mod runner;

pub use config::{
    apply_override, parse_override, CapacityConfig, DataConfig, DefenseSweepConfig,
    ExperimentConfig, HparamSweepConfig,
};
pub use output::{
    write_attack_outputs, write_capacity_outputs, write_defense_outputs, write_hparam_outputs,
    Manifest, OUTPUT_FORMAT_VERSION,
};
pub use runner::{Aggregate, DefenseRow, Experiment, HparamResult, HparamRow, RunRecord};
