//! Experiment configs, presets and CSV output.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod presets;

pub use config::{ExperimentConfig, GraphSpec, ObjectiveSpec, SolverKind, SolverSpec, StepSize};
pub use experiment::{run_experiment, simulate, ExperimentOutcome};
pub use metrics::{consensus_error, rate_fit, residual, RateFit};
pub use presets::{preset_fig_left, preset_fig_right};
