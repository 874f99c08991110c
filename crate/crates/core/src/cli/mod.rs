//! Config-driven experiment runner behind the `dumbbell` binary.

pub mod config;
pub mod output;
pub mod run;

pub use config::{load_config, parse_config, ExperimentConfig, ExperimentKind};
pub use output::{report, write_results, Manifest};
pub use run::{run_experiment, Assertion, RunRecord};
