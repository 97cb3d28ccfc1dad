//! Built-in logistic-regression experiments.
//!
//! Both presets use 8 agents, 5 features plus a regularized bias, 10 samples
//! per agent and `xi = 1`. The certified step size is far smaller than what
//! the method tolerates in practice, so the presets default to the hand-tuned
//! steps below. Pass `theorem1` for `eta.ab` to use the certified one.
//!
//! The row-stochastic baseline divides local gradients by its estimate of the
//! left Perron vector, whose entries can be small on sparse digraphs, so it
//! needs a much smaller step than `ab` to stay stable.

use std::path::PathBuf;

use crate::solvers::SUBGRADIENT_PUSH_ETA0;

use super::config::{ExperimentConfig, GraphSpec, ObjectiveSpec, SolverKind, SolverSpec, StepSize};

pub const PRESET_AGENTS: usize = 8;
pub const PRESET_FEATURES: usize = 5;
pub const PRESET_SAMPLES: usize = 10;
pub const PRESET_XI: f64 = 1.0;
pub const PRESET_ITERATIONS: usize = 3000;
/// Hand-tuned step for `ab` and `eq4` on the preset data.
pub const PRESET_ETA: f64 = 0.02;
/// Hand-tuned step for the row-stochastic baseline.
pub const PRESET_ROW_ETA: f64 = 0.001;
/// Step for the density comparison, small enough that iteration 1000 is
/// still above the floating-point floor.
pub const FIG_RIGHT_ETA: f64 = 0.005;
/// Extra edges of the single comparison graph.
pub const FIG_LEFT_EXTRA_EDGES: usize = 4;
/// Extra edges of the three nested density graphs, sparsest first.
pub const FIG_RIGHT_EXTRA_EDGES: [usize; 3] = [4, 10, 18];

fn logistic() -> ObjectiveSpec {
    ObjectiveSpec::Logistic {
        features: PRESET_FEATURES,
        samples_per_agent: PRESET_SAMPLES,
        xi: PRESET_XI,
        regularize_bias: true,
        data: None,
    }
}

/// All four solvers on one sparse graph. `eq4` runs on the symmetrized graph.
pub fn preset_fig_left(seed: u64) -> ExperimentConfig {
    let eta = StepSize::Fixed(PRESET_ETA);
    ExperimentConfig {
        name: "fig-left".into(),
        seed,
        graph: GraphSpec::Generated {
            n: PRESET_AGENTS,
            extra_edges: vec![FIG_LEFT_EXTRA_EDGES],
        },
        objective: logistic(),
        solvers: vec![
            SolverSpec {
                kind: SolverKind::Ab,
                eta,
            },
            SolverSpec {
                kind: SolverKind::RowStochastic,
                eta: StepSize::Fixed(PRESET_ROW_ETA),
            },
            SolverSpec {
                kind: SolverKind::SubgradientPush,
                eta: StepSize::Fixed(SUBGRADIENT_PUSH_ETA0),
            },
            SolverSpec {
                kind: SolverKind::Eq4,
                eta,
            },
        ],
        iterations: PRESET_ITERATIONS,
        output: PathBuf::from("out"),
        certify: false,
    }
}

/// The tracking method alone on three nested graphs of increasing density.
pub fn preset_fig_right(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        name: "fig-right".into(),
        seed,
        graph: GraphSpec::Generated {
            n: PRESET_AGENTS,
            extra_edges: FIG_RIGHT_EXTRA_EDGES.to_vec(),
        },
        objective: logistic(),
        solvers: vec![SolverSpec {
            kind: SolverKind::Ab,
            eta: StepSize::Fixed(FIG_RIGHT_ETA),
        }],
        iterations: PRESET_ITERATIONS,
        output: PathBuf::from("out"),
        certify: false,
    }
}
