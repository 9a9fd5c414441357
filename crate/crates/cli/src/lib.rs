//! Scenario runner for the `hjb-pi` policy-iteration toolkit: flat config
//! files, per-iteration CSV logs, surrogate and domain dumps, SVG plots,
//! generalization scoring and invariance audits.

pub mod config;
pub mod error;
pub mod plot;
pub mod run;

pub use config::{presets, GridSpec, Mode, ScenarioConfig};
pub use error::CliError;
pub use run::{audit, generalization_eval, load_run, precompute_reference, run_scenario, RunOptions, RunSummary};
