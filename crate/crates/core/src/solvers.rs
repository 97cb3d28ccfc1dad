//! Step functions over stacked agent state and a trajectory runner.
//!
//! State matrices are `n x p`: row `i` belongs to agent `i`. Mixing with an
//! `n x n` weight matrix from the left is the Kronecker-lifted update on the
//! stacked `np` vector.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::analysis::ContractionCert;
use crate::error::{Error, Result};
use crate::harness::metrics::{consensus_error, residual};
use crate::linalg::{all_finite, column_sums, inf_norm, max_abs};
use crate::objectives::{stacked_gradients, Objective};
use crate::weights::{WeightKind, WeightMatrix};

/// Relative tolerance of the gradient-sum conservation check.
pub const CONSERVATION_TOL: f64 = 1e-9;
/// Default base step of the diminishing subgradient-push schedule.
pub const SUBGRADIENT_PUSH_ETA0: f64 = 1.0;

/// Iterates, gradient trackers and the cached gradients at `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub grads_prev: DMatrix<f64>,
    pub k: usize,
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("step size {eta} must be positive")))
    }
}

fn check_mixing(w: &WeightMatrix, n: usize, rows: bool, cols: bool, what: &str) -> Result<()> {
    if w.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: w.n(),
        });
    }
    if (rows && !w.is_row_stochastic()) || (cols && !w.is_column_stochastic()) {
        return Err(Error::InvalidInput(format!(
            "{what} matrix has the wrong stochasticity"
        )));
    }
    Ok(())
}

fn guard(next: &DMatrix<f64>, prev: &DMatrix<f64>, k: usize, eta: f64) -> Result<()> {
    if all_finite(next) {
        Ok(())
    } else {
        Err(Error::Diverged {
            k,
            eta,
            max_abs: max_abs(prev),
        })
    }
}

/// `y(0) = grad f(x(0))`.
pub fn ab_init(obj: &dyn Objective, x0: &DMatrix<f64>) -> Result<SolverState> {
    let g = stacked_gradients(obj, x0)?;
    Ok(SolverState {
        x: x0.clone(),
        y: g.clone(),
        grads_prev: g,
        k: 0,
    })
}

/// One iteration of the row/column-stochastic tracking method:
///
/// ```text
/// x <- A x - eta y
/// y <- B (y + grad f(x_new) - grad f(x_old))
/// ```
pub fn ab_step(
    state: &SolverState,
    a: &WeightMatrix,
    b: &WeightMatrix,
    eta: f64,
    obj: &dyn Objective,
) -> Result<SolverState> {
    check_eta(eta)?;
    let n = state.x.nrows();
    if a.kind() == WeightKind::ColumnStochastic || b.kind() == WeightKind::RowStochastic {
        return Err(Error::InvalidInput(
            "expected a row-stochastic A and a column-stochastic B".into(),
        ));
    }
    check_mixing(a, n, true, false, "A")?;
    check_mixing(b, n, false, true, "B")?;
    let k = state.k + 1;
    let x = a.matrix() * &state.x - &state.y * eta;
    guard(&x, &state.x, k, eta)?;
    let g = stacked_gradients(obj, &x)?;
    let y = b.matrix() * (&state.y + &g - &state.grads_prev);
    guard(&y, &state.x, k, eta)?;
    Ok(SolverState { x, y, grads_prev: g, k })
}

/// `(||1^T y - 1^T grad f||_inf, tol * (1 + ||1^T grad f||_inf))`.
pub fn conservation_gap(state: &SolverState) -> (f64, f64) {
    let ys = column_sums(&state.y);
    let gs = column_sums(&state.grads_prev);
    let dev = inf_norm(&ys.iter().zip(&gs).map(|(a, b)| a - b).collect::<Vec<_>>());
    (dev, CONSERVATION_TOL * (1.0 + inf_norm(&gs)))
}

pub fn check_conservation(state: &SolverState) -> Result<()> {
    let (deviation, bound) = conservation_gap(state);
    if deviation <= bound {
        Ok(())
    } else {
        Err(Error::ConservationViolated {
            k: state.k,
            deviation,
            bound,
        })
    }
}

/// Doubly-stochastic tracking over undirected graphs: the gradient
/// correction is added after mixing.
///
/// ```text
/// x <- W x - eta y
/// y <- W y + grad f(x_new) - grad f(x_old)
/// ```
pub fn baseline_eq4_step(state: &SolverState, w: &WeightMatrix, eta: f64, obj: &dyn Objective) -> Result<SolverState> {
    check_eta(eta)?;
    check_mixing(w, state.x.nrows(), true, true, "W")?;
    let k = state.k + 1;
    let x = w.matrix() * &state.x - &state.y * eta;
    guard(&x, &state.x, k, eta)?;
    let g = stacked_gradients(obj, &x)?;
    let y = w.matrix() * &state.y + &g - &state.grads_prev;
    guard(&y, &state.x, k, eta)?;
    Ok(SolverState { x, y, grads_prev: g, k })
}

/// State of the row-stochastic baseline that learns the left Perron vector
/// alongside the optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct RowStochasticState {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    /// Row `i` is agent `i`'s running estimate of `pi_r^T`.
    pub eig: DMatrix<f64>,
    pub grads_prev: DMatrix<f64>,
    pub k: usize,
}

const DIAG_FLOOR: f64 = 1e-300;

fn scale_rows_by_diag(g: &DMatrix<f64>, eig: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let mut out = g.clone();
    for i in 0..g.nrows() {
        let d = eig[(i, i)];
        if !(d > DIAG_FLOOR) {
            return Err(Error::InvalidInput(format!(
                "eigenvector estimate of agent {i} vanished at iteration {k}"
            )));
        }
        out.row_mut(i).unscale_mut(d);
    }
    Ok(out)
}

/// Eigenvector estimates start at the canonical basis, so `z(0) = grad f(x(0))`.
pub fn row_baseline_init(obj: &dyn Objective, x0: &DMatrix<f64>) -> Result<RowStochasticState> {
    let n = x0.nrows();
    let g = stacked_gradients(obj, x0)?;
    Ok(RowStochasticState {
        x: x0.clone(),
        z: g.clone(),
        eig: DMatrix::identity(n, n),
        grads_prev: g,
        k: 0,
    })
}

/// ```text
/// Y <- A Y
/// x <- A x - eta z
/// z <- A z + grad f(x_new) / [Y_new]_ii - grad f(x_old) / [Y_old]_ii
/// ```
pub fn baseline_row_stochastic_step(
    state: &RowStochasticState,
    a: &WeightMatrix,
    eta: f64,
    obj: &dyn Objective,
) -> Result<RowStochasticState> {
    check_eta(eta)?;
    check_mixing(a, state.x.nrows(), true, false, "A")?;
    let k = state.k + 1;
    let eig = a.matrix() * &state.eig;
    let x = a.matrix() * &state.x - &state.z * eta;
    guard(&x, &state.x, k, eta)?;
    let g = stacked_gradients(obj, &x)?;
    let z = a.matrix() * &state.z + scale_rows_by_diag(&g, &eig, k)?
        - scale_rows_by_diag(&state.grads_prev, &state.eig, k)?;
    guard(&z, &state.x, k, eta)?;
    Ok(RowStochasticState {
        x,
        z,
        eig,
        grads_prev: g,
        k,
    })
}

/// Push-sum distributed gradient descent state.
#[derive(Debug, Clone, PartialEq)]
pub struct PushSumState {
    pub w: DMatrix<f64>,
    /// Push-sum weights, one per agent.
    pub s: DVector<f64>,
    /// De-biased iterates `w_i / s_i`.
    pub z: DMatrix<f64>,
    pub k: usize,
}

pub fn subgradient_push_init(x0: &DMatrix<f64>) -> PushSumState {
    PushSumState {
        w: x0.clone(),
        s: DVector::from_element(x0.nrows(), 1.0),
        z: x0.clone(),
        k: 0,
    }
}

/// Diminishing-step push-sum gradient descent, `eta_k = eta0 / sqrt(k + 1)`:
///
/// ```text
/// w <- B (w - eta_k grad f(z));  s <- B s;  z <- w / s
/// ```
pub fn subgradient_push_step(
    state: &PushSumState,
    b: &WeightMatrix,
    eta0: f64,
    obj: &dyn Objective,
) -> Result<PushSumState> {
    check_eta(eta0)?;
    check_mixing(b, state.w.nrows(), false, true, "B")?;
    let k = state.k + 1;
    let eta = eta0 / ((state.k + 1) as f64).sqrt();
    let g = stacked_gradients(obj, &state.z)?;
    let w = b.matrix() * (&state.w - g * eta);
    let s = b.matrix() * &state.s;
    let mut z = w.clone();
    for i in 0..z.nrows() {
        z.row_mut(i).unscale_mut(s[i]);
    }
    guard(&z, &state.z, k, eta)?;
    Ok(PushSumState { w, s, z, k })
}

/// A solver as seen by [`run`]: a pure step plus accessors for what gets
/// recorded.
pub trait Stepper {
    type State: Clone;

    fn name(&self) -> &str;

    fn init(&self, x0: &DMatrix<f64>) -> Result<Self::State>;

    fn step(&self, state: &Self::State) -> Result<Self::State>;

    /// The per-agent estimates of the optimum.
    fn iterate<'s>(&self, state: &'s Self::State) -> &'s DMatrix<f64>;

    /// Gradient trackers, when the method has the `(x, y)` structure the
    /// certificate talks about.
    fn tracker<'s>(&self, _state: &'s Self::State) -> Option<&'s DMatrix<f64>> {
        None
    }

    /// Runtime invariant checked after every iteration.
    fn check(&self, _state: &Self::State) -> Result<()> {
        Ok(())
    }
}

pub struct AbMethod<'a> {
    pub a: &'a WeightMatrix,
    pub b: &'a WeightMatrix,
    pub eta: f64,
    pub obj: &'a dyn Objective,
}

impl Stepper for AbMethod<'_> {
    type State = SolverState;

    fn name(&self) -> &str {
        "ab"
    }

    fn init(&self, x0: &DMatrix<f64>) -> Result<SolverState> {
        ab_init(self.obj, x0)
    }

    fn step(&self, state: &SolverState) -> Result<SolverState> {
        ab_step(state, self.a, self.b, self.eta, self.obj)
    }

    fn iterate<'s>(&self, state: &'s SolverState) -> &'s DMatrix<f64> {
        &state.x
    }

    fn tracker<'s>(&self, state: &'s SolverState) -> Option<&'s DMatrix<f64>> {
        Some(&state.y)
    }

    fn check(&self, state: &SolverState) -> Result<()> {
        check_conservation(state)
    }
}

pub struct Eq4Method<'a> {
    pub w: &'a WeightMatrix,
    pub eta: f64,
    pub obj: &'a dyn Objective,
}

impl Stepper for Eq4Method<'_> {
    type State = SolverState;

    fn name(&self) -> &str {
        "eq4"
    }

    fn init(&self, x0: &DMatrix<f64>) -> Result<SolverState> {
        ab_init(self.obj, x0)
    }

    fn step(&self, state: &SolverState) -> Result<SolverState> {
        baseline_eq4_step(state, self.w, self.eta, self.obj)
    }

    fn iterate<'s>(&self, state: &'s SolverState) -> &'s DMatrix<f64> {
        &state.x
    }
}

pub struct RowStochasticMethod<'a> {
    pub a: &'a WeightMatrix,
    pub eta: f64,
    pub obj: &'a dyn Objective,
}

impl Stepper for RowStochasticMethod<'_> {
    type State = RowStochasticState;

    fn name(&self) -> &str {
        "row-stochastic"
    }

    fn init(&self, x0: &DMatrix<f64>) -> Result<RowStochasticState> {
        row_baseline_init(self.obj, x0)
    }

    fn step(&self, state: &RowStochasticState) -> Result<RowStochasticState> {
        baseline_row_stochastic_step(state, self.a, self.eta, self.obj)
    }

    fn iterate<'s>(&self, state: &'s RowStochasticState) -> &'s DMatrix<f64> {
        &state.x
    }
}

pub struct SubgradientPush<'a> {
    pub b: &'a WeightMatrix,
    pub eta0: f64,
    pub obj: &'a dyn Objective,
}

impl Stepper for SubgradientPush<'_> {
    type State = PushSumState;

    fn name(&self) -> &str {
        "subgradient-push"
    }

    fn init(&self, x0: &DMatrix<f64>) -> Result<PushSumState> {
        Ok(subgradient_push_init(x0))
    }

    fn step(&self, state: &PushSumState) -> Result<PushSumState> {
        subgradient_push_step(state, self.b, self.eta0, self.obj)
    }

    fn iterate<'s>(&self, state: &'s PushSumState) -> &'s DMatrix<f64> {
        &state.z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    /// `(1/n) sum_i ||x_i - x*||_2`.
    pub residual: f64,
    /// `max_i ||x_i - mean(x)||_2`.
    pub consensus: f64,
    /// The three certificate error norms, when a certificate is attached.
    pub t: Option<[f64; 3]>,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.residual).collect()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn t_vectors(&self) -> Option<Vec<[f64; 3]>> {
        self.rows.iter().map(|r| r.t).collect()
    }
}

/// A run that stopped early, with everything recorded up to the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub trace: Trace,
    pub error: Error,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run stopped after {} records: {}", self.trace.len(), self.error)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Applies `stepper` `iters` times from `state`, recording one row per
/// iteration plus the initial one.
pub fn run<S: Stepper>(
    stepper: &S,
    state: S::State,
    iters: usize,
    cert: Option<&ContractionCert>,
    x_star: &DVector<f64>,
) -> std::result::Result<Trace, RunFailure> {
    let mut trace = Trace::default();
    if iters == 0 {
        return Err(RunFailure {
            trace,
            error: Error::InvalidInput("iteration count must be at least 1".into()),
        });
    }
    trace.rows.reserve(iters + 1);
    let start = Instant::now();
    let record = |k: usize, st: &S::State, trace: &mut Trace| -> Result<()> {
        stepper.check(st)?;
        let x = stepper.iterate(st);
        let t = match (cert, stepper.tracker(st)) {
            (Some(c), Some(y)) => Some(c.t_vector(x, y, x_star)),
            _ => None,
        };
        trace.rows.push(TraceRow {
            k,
            residual: residual(x, x_star)?,
            consensus: consensus_error(x),
            t,
            elapsed_secs: start.elapsed().as_secs_f64(),
        });
        Ok(())
    };
    let mut current = state;
    if let Err(error) = record(0, &current, &mut trace) {
        return Err(RunFailure { trace, error });
    }
    for k in 1..=iters {
        let next = match stepper.step(&current) {
            Ok(s) => s,
            Err(error) => return Err(RunFailure { trace, error }),
        };
        if let Err(error) = record(k, &next, &mut trace) {
            return Err(RunFailure { trace, error });
        }
        current = next;
    }
    Ok(trace)
}
