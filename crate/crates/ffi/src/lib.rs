//! C ABI over `abtrack`.
//!
//! Every object is an opaque heap handle created by an `abt_*_new`-style
//! function and released with the matching `abt_*_free`. Fallible calls
//! return an [`AbtStatus`]; on failure the message is kept per thread and
//! can be copied out with [`abt_last_error_message`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use abtrack::analysis::{certify, CertificateSummary};
use abtrack::graph::{random_strongly_connected, Digraph};
use abtrack::harness::metrics::{consensus_error, residual};
use abtrack::objectives::{LogisticObjective, Objective, QuadraticObjective, OPTIMUM_TOL};
use abtrack::solvers::{ab_init, ab_step, conservation_gap, SolverState};
use abtrack::weights::{column_stochastic_from, row_stochastic_from, WeightMatrix, DEFAULT_SLACK};
use abtrack::Error;

/// Result codes of fallible calls.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotStronglyConnected = 3,
    Diverged = 4,
    CertificateFailed = 5,
    Io = 6,
    Parse = 7,
    NotConverged = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Directed graph with self-loops.
pub struct AbtGraph {
    inner: Digraph,
}

/// Local objectives of all agents plus their common minimizer.
pub struct AbtProblem {
    inner: Arc<dyn Objective>,
    optimum: DVector<f64>,
}

/// Convergence certificate for one graph and problem.
pub struct AbtCert {
    inner: CertificateSummary,
}

/// A running instance of the tracking method.
pub struct AbtSimulation {
    a: WeightMatrix,
    b: WeightMatrix,
    eta: f64,
    problem: Arc<dyn Objective>,
    optimum: DVector<f64>,
    state: SolverState,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> AbtStatus {
    match e {
        Error::NotStronglyConnected => AbtStatus::NotStronglyConnected,
        Error::Diverged { .. } | Error::ConservationViolated { .. } => AbtStatus::Diverged,
        Error::Certificate(_) => AbtStatus::CertificateFailed,
        Error::Io { .. } => AbtStatus::Io,
        Error::Parse { .. } => AbtStatus::Parse,
        Error::NotConverged { .. } => AbtStatus::NotConverged,
        _ => AbtStatus::InvalidArgument,
    }
}

/// Runs `f` and maps an error or panic to a status, keeping its message.
fn guarded(f: impl FnOnce() -> Result<(), AbtError>) -> AbtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AbtStatus::Ok,
        Ok(Err(AbtError(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AbtStatus::Panic
        }
    }
}

struct AbtError(AbtStatus, String);

impl From<Error> for AbtError {
    fn from(e: Error) -> Self {
        AbtError(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> AbtError {
    AbtError(AbtStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> AbtError {
    AbtError(AbtStatus::InvalidArgument, msg.into())
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, AbtError> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, AbtError> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], AbtError> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], AbtError> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn handle<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn abt_status_name(status: AbtStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        AbtStatus::Ok => b"ok\0",
        AbtStatus::NullPointer => b"null pointer\0",
        AbtStatus::InvalidArgument => b"invalid argument\0",
        AbtStatus::NotStronglyConnected => b"graph not strongly connected\0",
        AbtStatus::Diverged => b"iteration diverged\0",
        AbtStatus::CertificateFailed => b"certificate failed\0",
        AbtStatus::Io => b"i/o error\0",
        AbtStatus::Parse => b"parse error\0",
        AbtStatus::NotConverged => b"not converged\0",
        AbtStatus::BufferTooSmall => b"buffer too small\0",
        AbtStatus::Panic => b"internal panic\0",
    };
    s.as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string, truncating if needed. Returns the full message
/// length without the terminator. `buf` may be null when `len` is 0.
#[no_mangle]
pub unsafe extern "C" fn abt_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if len > 0 && !buf.is_null() {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn abt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a graph from `len` directed edges `src[e] -> dst[e]`. Self-loops
/// are added automatically.
#[no_mangle]
pub unsafe extern "C" fn abt_graph_from_edges(
    n: usize,
    src: *const usize,
    dst: *const usize,
    len: usize,
    out: *mut *mut AbtGraph,
) -> AbtStatus {
    guarded(|| {
        let out = out_ptr(out, "out")?;
        let src = slice(src, len, "src")?;
        let dst = slice(dst, len, "dst")?;
        let g = Digraph::from_edges(n, src.iter().copied().zip(dst.iter().copied()))?;
        *out = handle(AbtGraph { inner: g });
        Ok(())
    })
}

/// Seeded strongly connected graph: a random Hamiltonian cycle plus
/// `extra_edges` random edges.
#[no_mangle]
pub unsafe extern "C" fn abt_graph_random(
    n: usize,
    extra_edges: usize,
    seed: u64,
    out: *mut *mut AbtGraph,
) -> AbtStatus {
    guarded(|| {
        let out = out_ptr(out, "out")?;
        *out = handle(AbtGraph {
            inner: random_strongly_connected(n, extra_edges, seed)?,
        });
        Ok(())
    })
}

/// Loads an edge-list file.
#[no_mangle]
pub unsafe extern "C" fn abt_graph_load(path: *const c_char, out: *mut *mut AbtGraph) -> AbtStatus {
    guarded(|| {
        let out = out_ptr(out, "out")?;
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not valid UTF-8"))?;
        *out = handle(AbtGraph {
            inner: Digraph::load_edge_list(path)?,
        });
        Ok(())
    })
}

/// Number of nodes, 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn abt_graph_n(graph: *const AbtGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.inner.n())
}

/// Number of edges including self-loops, 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn abt_graph_num_edges(graph: *const AbtGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.inner.num_edges())
}

/// 1 if strongly connected, 0 if not or if the handle is null.
#[no_mangle]
pub unsafe extern "C" fn abt_graph_is_strongly_connected(graph: *const AbtGraph) -> i32 {
    graph.as_ref().map_or(0, |g| i32::from(g.inner.is_strongly_connected()))
}

#[no_mangle]
pub unsafe extern "C" fn abt_graph_free(graph: *mut AbtGraph) {
    release(graph);
}

fn problem_from(obj: Arc<dyn Objective>) -> Result<AbtProblem, AbtError> {
    let optimum = obj.centralized_optimum(OPTIMUM_TOL)?;
    Ok(AbtProblem { inner: obj, optimum })
}

/// Random strongly convex quadratics, one per agent.
#[no_mangle]
pub unsafe extern "C" fn abt_problem_quadratic_random(
    n: usize,
    dim: usize,
    seed: u64,
    out: *mut *mut AbtProblem,
) -> AbtStatus {
    guarded(|| {
        let out = out_ptr(out, "out")?;
        *out = handle(problem_from(Arc::new(QuadraticObjective::random(n, dim, seed)?))?);
        Ok(())
    })
}

/// Regularized logistic regression on random data. The variable has
/// `features + 1` entries, the last one being the bias.
#[no_mangle]
pub unsafe extern "C" fn abt_problem_logistic_random(
    n: usize,
    features: usize,
    samples_per_agent: usize,
    xi: f64,
    regularize_bias: bool,
    seed: u64,
    out: *mut *mut AbtProblem,
) -> AbtStatus {
    guarded(|| {
        let out = out_ptr(out, "out")?;
        let obj = LogisticObjective::random(n, features, samples_per_agent, xi, regularize_bias, seed)?;
        *out = handle(problem_from(Arc::new(obj))?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn abt_problem_n_agents(problem: *const AbtProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.inner.n_agents())
}

#[no_mangle]
pub unsafe extern "C" fn abt_problem_dim(problem: *const AbtProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.inner.dim())
}

/// Copies the minimizer of the average objective into `buf[0..dim]`.
#[no_mangle]
pub unsafe extern "C" fn abt_problem_optimum(problem: *const AbtProblem, buf: *mut f64, len: usize) -> AbtStatus {
    guarded(|| {
        let p = deref(problem, "problem")?;
        if len < p.optimum.len() {
            return Err(AbtError(
                AbtStatus::BufferTooSmall,
                format!("need {} entries, got {len}", p.optimum.len()),
            ));
        }
        slice_mut(buf, len, "buf")?[..p.optimum.len()].copy_from_slice(p.optimum.as_slice());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn abt_problem_free(problem: *mut AbtProblem) {
    release(problem);
}

fn check_agents(graph: &AbtGraph, problem: &AbtProblem) -> Result<(), AbtError> {
    if graph.inner.n() != problem.inner.n_agents() {
        return Err(invalid(format!(
            "graph has {} nodes but the problem has {} agents",
            graph.inner.n(),
            problem.inner.n_agents()
        )));
    }
    Ok(())
}

/// Builds the convergence certificate and evaluates it at `eta_max / 2`.
#[no_mangle]
pub unsafe extern "C" fn abt_cert_new(
    graph: *const AbtGraph,
    problem: *const AbtProblem,
    out: *mut *mut AbtCert,
) -> AbtStatus {
    guarded(|| {
        let out = out_ptr(out, "out")?;
        let g = deref(graph, "graph")?;
        let p = deref(problem, "problem")?;
        check_agents(g, p)?;
        let a = row_stochastic_from(&g.inner)?;
        let b = column_stochastic_from(&g.inner)?;
        let cert = certify(&a, &b, p.inner.smoothness()?, DEFAULT_SLACK)?;
        *out = handle(AbtCert {
            inner: CertificateSummary::new(cert, None)?,
        });
        Ok(())
    })
}

/// Largest certified step size.
#[no_mangle]
pub unsafe extern "C" fn abt_cert_eta_max(cert: *const AbtCert, out: *mut f64) -> AbtStatus {
    guarded(|| {
        *out_ptr(out, "out")? = deref(cert, "cert")?.inner.eta_max;
        Ok(())
    })
}

/// Contraction factors of the two mixing matrices in their frame norms.
#[no_mangle]
pub unsafe extern "C" fn abt_cert_sigmas(cert: *const AbtCert, sigma_a: *mut f64, sigma_b: *mut f64) -> AbtStatus {
    guarded(|| {
        let c = &deref(cert, "cert")?.inner.cert;
        *out_ptr(sigma_a, "sigma_a")? = c.sigma_a();
        *out_ptr(sigma_b, "sigma_b")? = c.sigma_b();
        Ok(())
    })
}

/// Copies the nine coupling constants into `buf[0..9]`.
#[no_mangle]
pub unsafe extern "C" fn abt_cert_constants(cert: *const AbtCert, buf: *mut f64, len: usize) -> AbtStatus {
    guarded(|| {
        let c = &deref(cert, "cert")?.inner.cert;
        if len < 9 {
            return Err(AbtError(
                AbtStatus::BufferTooSmall,
                format!("need 9 entries, got {len}"),
            ));
        }
        slice_mut(buf, len, "buf")?[..9].copy_from_slice(&c.a);
        Ok(())
    })
}

/// Spectral radius of the 3x3 gain matrix at step `eta`.
#[no_mangle]
pub unsafe extern "C" fn abt_cert_spectral_radius(cert: *const AbtCert, eta: f64, out: *mut f64) -> AbtStatus {
    guarded(|| {
        let c = &deref(cert, "cert")?.inner.cert;
        let out = out_ptr(out, "out")?;
        let j = abtrack::analysis::build_j(eta, c)?;
        *out = abtrack::analysis::spectral_radius(&j)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn abt_cert_free(cert: *mut AbtCert) {
    release(cert);
}

/// Starts the tracking method on `graph` and `problem` with step `eta`.
/// `x0` holds `n * dim` entries in agent-major order; null starts at zero.
#[no_mangle]
pub unsafe extern "C" fn abt_sim_new(
    graph: *const AbtGraph,
    problem: *const AbtProblem,
    eta: f64,
    x0: *const f64,
    out: *mut *mut AbtSimulation,
) -> AbtStatus {
    guarded(|| {
        let out = out_ptr(out, "out")?;
        let g = deref(graph, "graph")?;
        let p = deref(problem, "problem")?;
        check_agents(g, p)?;
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(invalid(format!("step size {eta} must be positive")));
        }
        let (n, dim) = (p.inner.n_agents(), p.inner.dim());
        let x0 = if x0.is_null() {
            DMatrix::zeros(n, dim)
        } else {
            DMatrix::from_row_slice(n, dim, slice(x0, n * dim, "x0")?)
        };
        let state = ab_init(p.inner.as_ref(), &x0)?;
        *out = handle(AbtSimulation {
            a: row_stochastic_from(&g.inner)?,
            b: column_stochastic_from(&g.inner)?,
            eta,
            problem: Arc::clone(&p.inner),
            optimum: p.optimum.clone(),
            state,
        });
        Ok(())
    })
}

/// Advances `steps` iterations. On divergence the state stays at the last
/// finite iterate.
#[no_mangle]
pub unsafe extern "C" fn abt_sim_step(sim: *mut AbtSimulation, steps: usize) -> AbtStatus {
    guarded(|| {
        let s = out_ptr(sim, "sim")?;
        for _ in 0..steps {
            s.state = ab_step(&s.state, &s.a, &s.b, s.eta, s.problem.as_ref())?;
        }
        Ok(())
    })
}

/// Iterations taken so far, 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn abt_sim_iteration(sim: *const AbtSimulation) -> usize {
    sim.as_ref().map_or(0, |s| s.state.k)
}

/// Average distance of the agents to the minimizer.
#[no_mangle]
pub unsafe extern "C" fn abt_sim_residual(sim: *const AbtSimulation, out: *mut f64) -> AbtStatus {
    guarded(|| {
        let s = deref(sim, "sim")?;
        *out_ptr(out, "out")? = residual(&s.state.x, &s.optimum)?;
        Ok(())
    })
}

/// Largest distance of an agent to the agents' mean.
#[no_mangle]
pub unsafe extern "C" fn abt_sim_consensus_error(sim: *const AbtSimulation, out: *mut f64) -> AbtStatus {
    guarded(|| {
        let s = deref(sim, "sim")?;
        *out_ptr(out, "out")? = consensus_error(&s.state.x);
        Ok(())
    })
}

/// Deviation of the tracker sum from the gradient sum.
#[no_mangle]
pub unsafe extern "C" fn abt_sim_conservation_gap(sim: *const AbtSimulation, out: *mut f64) -> AbtStatus {
    guarded(|| {
        let s = deref(sim, "sim")?;
        *out_ptr(out, "out")? = conservation_gap(&s.state).0;
        Ok(())
    })
}

/// Copies the iterates into `buf` in agent-major order (`n * dim` entries).
#[no_mangle]
pub unsafe extern "C" fn abt_sim_iterates(sim: *const AbtSimulation, buf: *mut f64, len: usize) -> AbtStatus {
    guarded(|| {
        let s = deref(sim, "sim")?;
        let x = &s.state.x;
        let need = x.nrows() * x.ncols();
        if len < need {
            return Err(AbtError(
                AbtStatus::BufferTooSmall,
                format!("need {need} entries, got {len}"),
            ));
        }
        let buf = slice_mut(buf, len, "buf")?;
        for (i, row) in x.row_iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                buf[i * x.ncols() + j] = *v;
            }
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn abt_sim_free(sim: *mut AbtSimulation) {
    release(sim);
}
