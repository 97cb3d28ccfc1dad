//! Decentralized optimization over strongly connected directed graphs.
//!
//! Agents mix their iterates with a row-stochastic matrix and their gradient
//! trackers with a column-stochastic matrix. No eigenvector estimation is
//! needed, so every update is linear in the exchanged state.
//!
//! The crate is organized around the pieces of that pipeline:
//!
//! * [`graph`]: digraphs with connectivity checks and seeded generators.
//! * [`weights`]: stochastic weight matrices and their contraction norms.
//! * [`objectives`]: quadratic and regularized logistic local objectives.
//! * [`solvers`]: the tracking method, its baselines and the trajectory runner.
//! * [`analysis`]: the 3x3 small-gain certificate for geometric convergence.
//! * [`harness`]: experiment configs, presets and CSV traces.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod objectives;
pub mod rng;
pub mod solvers;
pub mod weights;

pub use error::{Error, Result};
