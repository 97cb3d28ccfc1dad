//! Runs a configured experiment and renders CSV traces plus a text summary.
//!
//! Every random draw derives from the config seed, and no wall-clock data is
//! written, so the same config always produces byte-identical files.

use std::fmt::Write as _;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::config::{ExperimentConfig, GraphSpec, ObjectiveSpec, SolverKind, StepSize};
use super::metrics::{rate_fit, RateFit, DEFAULT_TAIL_FRACTION};
use crate::analysis::{certify, check_trace_contraction, CertificateSummary, ContractionCert, ContractionReport};
use crate::error::{Error, Result};
use crate::graph::{random_strongly_connected, Digraph};
use crate::objectives::{LogisticObjective, Objective, QuadraticObjective, OPTIMUM_TOL};
use crate::rng::{self, Stream};
use crate::solvers::{run, AbMethod, Eq4Method, RowStochasticMethod, Stepper, SubgradientPush, Trace};
use crate::weights::{column_stochastic_from, metropolis_from, row_stochastic_from, DEFAULT_SLACK};

/// Slack allowed between the fitted rate and the certified one.
pub const RATE_CERT_SLACK: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct SolverOutcome {
    pub kind: SolverKind,
    /// Step actually used; `None` when it could not be determined.
    pub eta: Option<f64>,
    pub trace: Trace,
    pub error: Option<String>,
    pub rate: Option<RateFit>,
}

impl SolverOutcome {
    pub fn final_residual(&self) -> Option<f64> {
        self.trace.last().map(|r| r.residual)
    }
}

/// Certificate evaluated for one graph.
#[derive(Debug, Clone)]
pub struct CertificateOutcome {
    /// Evaluated at the run step when it is covered, else at `eta_max / 2`.
    pub summary: CertificateSummary,
    /// Whether the `ab` step lies in `(0, eta_max]`.
    pub covered: bool,
    pub contraction: Option<ContractionReport>,
}

impl CertificateOutcome {
    pub fn failed(&self) -> bool {
        self.covered
            && (!self.summary.lemma8
                || self.summary.rho_j >= 1.0
                || self.contraction.as_ref().is_some_and(|c| !c.passed()))
    }
}

#[derive(Debug, Clone)]
pub struct GraphOutcome {
    pub index: usize,
    pub graph: Digraph,
    pub extra_edges: Option<usize>,
    pub solvers: Vec<SolverOutcome>,
    pub certificate: Option<CertificateOutcome>,
    pub certificate_error: Option<String>,
}

impl GraphOutcome {
    pub fn solver(&self, kind: SolverKind) -> Option<&SolverOutcome> {
        self.solvers.iter().find(|s| s.kind == kind)
    }

    pub fn failed(&self) -> bool {
        self.solvers.iter().any(|s| s.error.is_some())
            || self.certificate_error.is_some()
            || self.certificate.as_ref().is_some_and(|c| c.failed())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub x_star: DVector<f64>,
    pub graphs: Vec<GraphOutcome>,
    /// Files written by [`run_experiment`]; empty after [`simulate`].
    pub written: Vec<PathBuf>,
}

impl ExperimentOutcome {
    /// Divergence or a failed certificate anywhere in the experiment.
    pub fn failed(&self) -> bool {
        self.graphs.iter().any(|g| g.failed())
    }

    pub fn csv_name(&self, index: usize) -> String {
        if self.graphs.len() == 1 {
            format!("{}.csv", self.config.name)
        } else {
            format!("{}-G{}.csv", self.config.name, index + 1)
        }
    }

    pub fn summary_name(&self) -> String {
        format!("{}-summary.txt", self.config.name)
    }

    pub fn render_csv(&self, index: usize) -> String {
        render_csv(&self.config, &self.graphs[index], self.graphs.len())
    }

    pub fn render_summary(&self) -> String {
        render_summary(self)
    }
}

/// The graphs named by the config, with their extra-edge counts.
pub fn build_graphs(cfg: &ExperimentConfig) -> Result<Vec<(Digraph, Option<usize>)>> {
    match &cfg.graph {
        GraphSpec::Generated { n, extra_edges } => extra_edges
            .iter()
            .map(|&e| Ok((random_strongly_connected(*n, e, cfg.seed)?, Some(e))))
            .collect(),
        GraphSpec::File(p) => {
            let g = Digraph::load_edge_list(p)?;
            if !g.is_strongly_connected() {
                return Err(Error::NotStronglyConnected);
            }
            Ok(vec![(g, None)])
        }
    }
}

pub fn build_objective(cfg: &ExperimentConfig, n: usize) -> Result<Box<dyn Objective>> {
    let obj: Box<dyn Objective> = match &cfg.objective {
        ObjectiveSpec::Logistic {
            features,
            samples_per_agent,
            xi,
            regularize_bias,
            data,
        } => match data {
            Some(path) => {
                let o = LogisticObjective::load_dataset_csv(path, *xi, *regularize_bias)?;
                if o.n_agents() != n {
                    return Err(Error::Config(format!(
                        "dataset has {} agents but the graph has {n}",
                        o.n_agents()
                    )));
                }
                Box::new(o)
            }
            None => Box::new(LogisticObjective::random(
                n,
                *features,
                *samples_per_agent,
                *xi,
                *regularize_bias,
                cfg.seed,
            )?),
        },
        ObjectiveSpec::Quadratic { dim } => Box::new(QuadraticObjective::random(n, *dim, cfg.seed)?),
    };
    Ok(obj)
}

/// Standard normal starting point shared by every solver.
pub fn initial_point(seed: u64, n: usize, p: usize) -> DMatrix<f64> {
    let mut rng = rng::stream(seed, Stream::InitialPoint);
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
}

fn execute<S: Stepper>(
    stepper: &S,
    x0: &DMatrix<f64>,
    iters: usize,
    cert: Option<&ContractionCert>,
    x_star: &DVector<f64>,
) -> (Trace, Option<String>) {
    let state = match stepper.init(x0) {
        Ok(s) => s,
        Err(e) => return (Trace::default(), Some(e.to_string())),
    };
    match run(stepper, state, iters, cert, x_star) {
        Ok(t) => (t, None),
        Err(f) => (f.trace, Some(f.error.to_string())),
    }
}

fn fixed_eta(step: StepSize, eta_max: Option<f64>) -> Option<f64> {
    match step {
        StepSize::Fixed(v) => Some(v),
        StepSize::Theorem1 => eta_max.map(|m| 0.5 * m),
    }
}

fn simulate_graph(
    cfg: &ExperimentConfig,
    index: usize,
    graph: Digraph,
    extra_edges: Option<usize>,
    obj: &dyn Objective,
    x_star: &DVector<f64>,
) -> Result<GraphOutcome> {
    let a = row_stochastic_from(&graph)?;
    let b = column_stochastic_from(&graph)?;
    let x0 = initial_point(cfg.seed, graph.n(), obj.dim());

    let mut cert = None;
    let mut cert_error = None;
    let mut eta_max = None;
    if cfg.wants_certificate() {
        match certify(&a, &b, obj.smoothness()?, DEFAULT_SLACK).and_then(|c| CertificateSummary::new(c, None)) {
            Ok(s) => {
                eta_max = Some(s.eta_max);
                cert = Some(s);
            }
            Err(e) => cert_error = Some(e.to_string()),
        }
    }

    let mut solvers: Vec<SolverOutcome> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .solvers
            .iter()
            .map(|spec| {
                let (a, b, x0, cert) = (&a, &b, &x0, cert.as_ref().map(|c| &c.cert));
                let graph = &graph;
                scope.spawn(move || {
                    let eta = fixed_eta(spec.eta, eta_max);
                    let (trace, error) = match (spec.kind, eta) {
                        (_, None) => (Trace::default(), Some("no certified step size available".to_string())),
                        (SolverKind::Ab, Some(eta)) => {
                            execute(&AbMethod { a, b, eta, obj }, x0, cfg.iterations, cert, x_star)
                        }
                        (SolverKind::RowStochastic, Some(eta)) => {
                            execute(&RowStochasticMethod { a, eta, obj }, x0, cfg.iterations, None, x_star)
                        }
                        (SolverKind::SubgradientPush, Some(eta0)) => {
                            execute(&SubgradientPush { b, eta0, obj }, x0, cfg.iterations, None, x_star)
                        }
                        (SolverKind::Eq4, Some(eta)) => match metropolis_from(&graph.symmetrized()) {
                            Ok(w) => execute(&Eq4Method { w: &w, eta, obj }, x0, cfg.iterations, None, x_star),
                            Err(e) => (Trace::default(), Some(e.to_string())),
                        },
                    };
                    let rate = rate_fit(&trace.residuals(), DEFAULT_TAIL_FRACTION).ok();
                    SolverOutcome {
                        kind: spec.kind,
                        eta,
                        trace,
                        error,
                        rate,
                    }
                })
            })
            .collect();
        for h in handles {
            solvers.push(h.join().expect("solver thread panicked"));
        }
    });

    let certificate = match cert {
        None => None,
        Some(base) => {
            let ab = solvers.iter().find(|s| s.kind == SolverKind::Ab);
            let eta = ab.and_then(|s| s.eta);
            let covered = eta.is_some_and(|e| e <= base.eta_max);
            let summary = match eta {
                Some(e) if covered && e != base.eta => CertificateSummary::new(base.cert.clone(), Some(e))?,
                _ => base,
            };
            let contraction = match (covered, ab) {
                (true, Some(s)) if s.trace.len() >= 2 => {
                    Some(check_trace_contraction(&s.trace, &summary.cert, summary.eta)?)
                }
                _ => None,
            };
            Some(CertificateOutcome {
                summary,
                covered,
                contraction,
            })
        }
    };
    for s in &solvers {
        if let Some(e) = &s.error {
            log::warn!("graph {}: {} stopped: {e}", index + 1, s.kind);
        }
    }
    Ok(GraphOutcome {
        index,
        graph,
        extra_edges,
        solvers,
        certificate,
        certificate_error: cert_error,
    })
}

/// Runs everything in memory without touching the filesystem.
pub fn simulate(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let graphs = build_graphs(cfg)?;
    let n = graphs[0].0.n();
    let obj = build_objective(cfg, n)?;
    let x_star = obj.centralized_optimum(OPTIMUM_TOL)?;
    let mut outcomes = Vec::with_capacity(graphs.len());
    for (i, (g, extra)) in graphs.into_iter().enumerate() {
        log::info!("graph {} of {}: {} edges", i + 1, cfg.graph_count(), g.num_edges());
        outcomes.push(simulate_graph(cfg, i, g, extra, obj.as_ref(), &x_star)?);
    }
    Ok(ExperimentOutcome {
        config: cfg.clone(),
        x_star,
        graphs: outcomes,
        written: Vec::new(),
    })
}

/// Runs the experiment and writes one CSV per graph plus a summary into
/// `cfg.output`. Solver divergence is recorded, not raised.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let mut outcome = simulate(cfg)?;
    let dir = &cfg.output;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for i in 0..outcome.graphs.len() {
        let path = dir.join(outcome.csv_name(i));
        std::fs::write(&path, outcome.render_csv(i)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    let path = dir.join(outcome.summary_name());
    std::fs::write(&path, outcome.render_summary()).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    outcome.written = written;
    Ok(outcome)
}

/// Certificates for every graph of the config, at `eta` or `eta_max / 2`.
pub fn certify_graphs(cfg: &ExperimentConfig, eta: Option<f64>) -> Result<Vec<(Digraph, Result<CertificateSummary>)>> {
    let graphs = build_graphs(cfg)?;
    let obj = build_objective(cfg, graphs[0].0.n())?;
    let smooth = obj.smoothness()?;
    graphs
        .into_iter()
        .map(|(g, _)| {
            let a = row_stochastic_from(&g)?;
            let b = column_stochastic_from(&g)?;
            let res = certify(&a, &b, smooth, DEFAULT_SLACK).and_then(|c| CertificateSummary::new(c, eta));
            Ok((g, res))
        })
        .collect()
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub const CSV_SCHEMA: &str = "\
CSV schema (one file per graph):
  lines starting with '#' hold metadata: experiment, seed, graph hash and
  size, the step size of each solver, eta_max when certified, and
  'series=' listing the residual columns.
  header: k,<solver>...,consensus_ab[,t1_ab,t2_ab,t3_ab]
  k            iteration, 0 ..= iterations
  <solver>     (1/n) sum_i ||x_i(k) - x*||_2 for that solver
  consensus_ab max_i ||x_i(k) - mean_j x_j(k)||_2 for ab (when ab runs)
  t1_ab..t3_ab certificate error norms for ab (when certified)
  Floats carry 17 significant digits. A solver that diverged leaves its
  remaining cells empty.";

fn render_csv(cfg: &ExperimentConfig, g: &GraphOutcome, total: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# experiment={}", cfg.name);
    let _ = writeln!(out, "# seed={}", cfg.seed);
    let _ = write!(
        out,
        "# graph={}/{} n={} edges={} hash={}",
        g.index + 1,
        total,
        g.graph.n(),
        g.graph.num_edges(),
        g.graph.content_hash()
    );
    if let Some(e) = g.extra_edges {
        let _ = write!(out, " extra_edges={e}");
    }
    out.push('\n');
    for s in &g.solvers {
        let eta = s.eta.map(fmt_float).unwrap_or_else(|| "none".into());
        let _ = writeln!(out, "# eta.{}={eta}", s.kind);
    }
    if let Some(c) = &g.certificate {
        let _ = writeln!(out, "# eta_max={}", fmt_float(c.summary.eta_max));
    }
    let names: Vec<&str> = g.solvers.iter().map(|s| s.kind.name()).collect();
    let _ = writeln!(out, "# series={}", names.join(","));

    let ab = g.solver(SolverKind::Ab);
    let with_t = g.certificate.is_some() && ab.is_some();
    out.push('k');
    for n in &names {
        out.push(',');
        out.push_str(n);
    }
    if ab.is_some() {
        out.push_str(",consensus_ab");
    }
    if with_t {
        out.push_str(",t1_ab,t2_ab,t3_ab");
    }
    out.push('\n');
    let cell = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
    for k in 0..=cfg.iterations {
        let _ = write!(out, "{k}");
        for s in &g.solvers {
            out.push(',');
            out.push_str(&cell(s.trace.rows.get(k).map(|r| r.residual)));
        }
        if let Some(ab) = ab {
            let row = ab.trace.rows.get(k);
            out.push(',');
            out.push_str(&cell(row.map(|r| r.consensus)));
            if with_t {
                for i in 0..3 {
                    out.push(',');
                    out.push_str(&cell(row.and_then(|r| r.t).map(|t| t[i])));
                }
            }
        }
        out.push('\n');
    }
    out
}

fn render_summary(o: &ExperimentOutcome) -> String {
    let cfg = &o.config;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "experiment {} (seed {}, {} iterations)",
        cfg.name, cfg.seed, cfg.iterations
    );
    for g in &o.graphs {
        let _ = write!(
            out,
            "\ngraph {}/{}: n = {}, edges = {}, hash = {}",
            g.index + 1,
            o.graphs.len(),
            g.graph.n(),
            g.graph.num_edges(),
            g.graph.content_hash()
        );
        if let Some(e) = g.extra_edges {
            let _ = write!(out, ", extra_edges = {e}");
        }
        out.push('\n');
        for s in &g.solvers {
            let eta = s.eta.map(|e| format!("{e:.6e}")).unwrap_or_else(|| "none".into());
            let fin = s
                .final_residual()
                .map(|r| format!("{r:.6e}"))
                .unwrap_or_else(|| "n/a".into());
            let rate = s
                .rate
                .map(|r| format!("{:.9} (R^2 {:.6})", r.rho, r.r_squared))
                .unwrap_or_else(|| "n/a".into());
            let status = match &s.error {
                None => "ok".to_string(),
                Some(e) => format!("FAILED: {e}"),
            };
            let _ = writeln!(
                out,
                "  {:<17} eta = {eta}  final residual = {fin}  rate = {rate}  {status}",
                s.kind.name()
            );
        }
        if let Some(e) = &g.certificate_error {
            let _ = writeln!(out, "  certificate FAILED: {e}");
        }
        if let Some(c) = &g.certificate {
            let s = &c.summary;
            let _ = writeln!(
                out,
                "  certificate: eta_max = {:.6e}, rho(J({:.6e})) = {:.12}, J eps < eps: {}",
                s.eta_max,
                s.eta,
                s.rho_j,
                if s.lemma8 { "pass" } else { "FAIL" }
            );
            if !c.covered {
                let _ = writeln!(
                    out,
                    "  ab step is above eta_max; the certificate does not cover this run"
                );
            }
            if let Some(r) = &c.contraction {
                let _ = writeln!(out, "  trace contraction: {r}");
            }
            if let Some(rate) = c
                .covered
                .then(|| g.solver(SolverKind::Ab))
                .flatten()
                .and_then(|s| s.rate)
            {
                let ok = rate.rho <= s.rho_j + RATE_CERT_SLACK;
                let _ = writeln!(
                    out,
                    "  fitted ab rate {} the certified rate",
                    if ok { "is within" } else { "EXCEEDS" }
                );
            }
        }
    }
    let _ = writeln!(out, "\nstatus: {}", if o.failed() { "FAILED" } else { "ok" });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig::parse(
            "graph.n = 4\ngraph.extra_edges = 1,3\nobjective = quadratic\nobjective.dim = 2\n\
             solvers = ab,row-stochastic,subgradient-push,eq4\neta.ab = 0.05\niterations = 30\ncertify = true",
        )
        .unwrap()
    }

    #[test]
    fn csv_shape() {
        let o = simulate(&tiny()).unwrap();
        assert_eq!(o.graphs.len(), 2);
        let csv = o.render_csv(0);
        let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), 30 + 2);
        assert_eq!(
            rows[0],
            "k,ab,row-stochastic,subgradient-push,eq4,consensus_ab,t1_ab,t2_ab,t3_ab"
        );
        assert!(rows[1].starts_with("0,"));
        assert_eq!(rows[1].split(',').count(), 9);
        assert_eq!(o.csv_name(1), "experiment-G2.csv");
    }

    #[test]
    fn simulate_is_deterministic() {
        let a = simulate(&tiny()).unwrap();
        let b = simulate(&tiny()).unwrap();
        assert_eq!(a.render_csv(1), b.render_csv(1));
        assert_eq!(a.render_summary(), b.render_summary());
    }

    #[test]
    fn floats_have_seventeen_digits() {
        assert_eq!(fmt_float(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_float(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn divergence_is_recorded() {
        let mut cfg = tiny();
        cfg.solvers.truncate(1);
        cfg.solvers[0].eta = StepSize::Fixed(1e3);
        cfg.certify = false;
        cfg.iterations = 400;
        let o = simulate(&cfg).unwrap();
        assert!(o.failed());
        let csv = o.render_csv(0);
        assert!(csv.lines().last().unwrap().ends_with(','));
    }
}
