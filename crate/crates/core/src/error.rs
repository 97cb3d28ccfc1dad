use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("graph is not strongly connected")]
    NotStronglyConnected,

    #[error("cannot add {requested} extra edges, only {available} free slots")]
    TooManyEdges { requested: usize, available: usize },

    #[error("objective is not strongly convex ({0})")]
    NotStronglyConvex(String),

    #[error("{what} did not converge within {iters} iterations")]
    NotConverged { what: &'static str, iters: usize },

    #[error("non-finite state at iteration {k} (eta = {eta:e}, max |x| before the step = {max_abs:e})")]
    Diverged { k: usize, eta: f64, max_abs: f64 },

    #[error("gradient-sum conservation violated at iteration {k}: deviation {deviation:e} > bound {bound:e}")]
    ConservationViolated { k: usize, deviation: f64, bound: f64 },

    #[error("step size {eta:e} outside the admissible interval (0, {upper:e})")]
    StepSizeOutOfRange { eta: f64, upper: f64 },

    #[error("certificate: {0}")]
    Certificate(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
