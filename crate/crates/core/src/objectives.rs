//! Local objective functions held by the agents.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Default gradient-norm tolerance for [`Objective::centralized_optimum`].
pub const OPTIMUM_TOL: f64 = 1e-13;
pub const OPTIMUM_MAX_ITERS: usize = 1_000_000;

/// Strong-convexity and gradient-Lipschitz constants shared by all agents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessInfo {
    pub alpha: f64,
    pub beta: f64,
}

/// `n` smooth local functions `f_i : R^p -> R`, one per agent.
pub trait Objective: Send + Sync {
    fn n_agents(&self) -> usize;

    fn dim(&self) -> usize;

    fn value(&self, agent: usize, x: &[f64]) -> Result<f64>;

    fn gradient_into(&self, agent: usize, x: &[f64], out: &mut [f64]) -> Result<()>;

    fn smoothness(&self) -> Result<SmoothnessInfo>;

    /// Minimizer of `(1/n) sum_i f_i`.
    fn centralized_optimum(&self, tol: f64) -> Result<DVector<f64>>;

    fn gradient(&self, agent: usize, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.gradient_into(agent, x, &mut out)?;
        Ok(out)
    }

    fn check_point(&self, agent: usize, x: &[f64]) -> Result<()> {
        if agent >= self.n_agents() {
            return Err(Error::InvalidInput(format!(
                "agent {agent} out of range for {} agents",
                self.n_agents()
            )));
        }
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Row `i` of the result is `grad f_i(x_i)` where `x_i` is row `i` of `x`.
pub fn stacked_gradients(obj: &dyn Objective, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    if n != obj.n_agents() {
        return Err(Error::DimensionMismatch {
            expected: obj.n_agents(),
            got: n,
        });
    }
    if p != obj.dim() {
        return Err(Error::DimensionMismatch {
            expected: obj.dim(),
            got: p,
        });
    }
    let mut g = DMatrix::zeros(n, p);
    let mut point = vec![0.0; p];
    let mut buf = vec![0.0; p];
    for i in 0..n {
        for (k, v) in point.iter_mut().enumerate() {
            *v = x[(i, k)];
        }
        obj.gradient_into(i, &point, &mut buf)?;
        for (k, v) in buf.iter().enumerate() {
            g[(i, k)] = *v;
        }
    }
    Ok(g)
}

/// Gradient of `F = (1/n) sum_i f_i` at a common point.
pub fn global_gradient(obj: &dyn Objective, x: &[f64]) -> Result<DVector<f64>> {
    let n = obj.n_agents();
    let mut total = DVector::zeros(obj.dim());
    let mut buf = vec![0.0; obj.dim()];
    for i in 0..n {
        obj.gradient_into(i, x, &mut buf)?;
        total += DVector::from_column_slice(&buf);
    }
    Ok(total / n as f64)
}

pub fn global_value(obj: &dyn Objective, x: &[f64]) -> Result<f64> {
    let n = obj.n_agents();
    let mut total = 0.0;
    for i in 0..n {
        total += obj.value(i, x)?;
    }
    Ok(total / n as f64)
}

/// Worst-case distance shrink of one gradient step of size `theta` on an
/// `alpha`-strongly convex, `beta`-smooth function.
pub fn descent_contraction_factor(alpha: f64, beta: f64, theta: f64) -> f64 {
    (1.0 - alpha * theta).abs().max((1.0 - beta * theta).abs())
}

/// Full-gradient descent on `F` with step `1/beta` until `||grad F|| <= tol`.
pub fn gradient_descent_optimum(obj: &dyn Objective, beta: f64, tol: f64, max_iters: usize) -> Result<DVector<f64>> {
    let mut x = DVector::zeros(obj.dim());
    let step = 1.0 / beta;
    for _ in 0..max_iters {
        let g = global_gradient(obj, x.as_slice())?;
        if g.norm() <= tol {
            return Ok(x);
        }
        x -= g * step;
    }
    Err(Error::NotConverged {
        what: "centralized gradient descent",
        iters: max_iters,
    })
}

fn symmetric_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// `f_i(x) = 0.5 x^T P_i x + q_i^T x` with `P_i` symmetric positive definite.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    p: Vec<DMatrix<f64>>,
    q: Vec<DVector<f64>>,
}

impl QuadraticObjective {
    pub fn new(p: Vec<DMatrix<f64>>, q: Vec<DVector<f64>>) -> Result<Self> {
        if p.is_empty() || p.len() != q.len() {
            return Err(Error::InvalidInput(
                "need one (P_i, q_i) pair per agent and at least one agent".into(),
            ));
        }
        let dim = q[0].len();
        for (i, (pi, qi)) in p.iter().zip(&q).enumerate() {
            if pi.shape() != (dim, dim) || qi.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: qi.len().max(pi.nrows()),
                });
            }
            if (pi - pi.transpose()).amax() > 1e-12 {
                return Err(Error::InvalidInput(format!("P_{i} is not symmetric")));
            }
            let (lo, _) = symmetric_extremes(pi);
            if lo <= 0.0 {
                return Err(Error::NotStronglyConvex(format!(
                    "P_{i} has smallest eigenvalue {lo:e}"
                )));
            }
        }
        Ok(QuadraticObjective { p, q })
    }

    /// `f_i(x) = 0.5 ||x - c_i||^2`.
    pub fn isotropic(centers: &[DVector<f64>]) -> Result<Self> {
        let dim = centers.first().map_or(0, |c| c.len());
        let p = centers.iter().map(|_| DMatrix::identity(dim, dim)).collect();
        let q = centers.iter().map(|c| -c).collect();
        Self::new(p, q)
    }

    /// Random well-conditioned instance: `P_i = G^T G / p + I`, `q_i ~ N(0, 4)`.
    pub fn random(n: usize, dim: usize, seed: u64) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(Error::InvalidInput("need n >= 1 and dim >= 1".into()));
        }
        let mut rng = rng::stream(seed, Stream::Data);
        let mut p = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        for _ in 0..n {
            let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mut pi = g.transpose() * &g / dim as f64 + DMatrix::identity(dim, dim);
            pi = (&pi + pi.transpose()) * 0.5;
            p.push(pi);
            q.push(DVector::from_fn(dim, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal)));
        }
        Self::new(p, q)
    }

    pub fn hessian(&self, agent: usize) -> &DMatrix<f64> {
        &self.p[agent]
    }

    pub fn linear_term(&self, agent: usize) -> &DVector<f64> {
        &self.q[agent]
    }
}

impl Objective for QuadraticObjective {
    fn n_agents(&self) -> usize {
        self.p.len()
    }

    fn dim(&self) -> usize {
        self.q[0].len()
    }

    fn value(&self, agent: usize, x: &[f64]) -> Result<f64> {
        self.check_point(agent, x)?;
        let x = DVector::from_column_slice(x);
        Ok(0.5 * x.dot(&(&self.p[agent] * &x)) + self.q[agent].dot(&x))
    }

    fn gradient_into(&self, agent: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_point(agent, x)?;
        let p = &self.p[agent];
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = self.q[agent][r];
            for (c, xc) in x.iter().enumerate() {
                acc += p[(r, c)] * xc;
            }
            *o = acc;
        }
        Ok(())
    }

    fn smoothness(&self) -> Result<SmoothnessInfo> {
        let mut alpha = f64::INFINITY;
        let mut beta: f64 = 0.0;
        for pi in &self.p {
            let (lo, hi) = symmetric_extremes(pi);
            alpha = alpha.min(lo);
            beta = beta.max(hi);
        }
        Ok(SmoothnessInfo { alpha, beta })
    }

    fn centralized_optimum(&self, _tol: f64) -> Result<DVector<f64>> {
        let dim = self.dim();
        let p_sum = self.p.iter().fold(DMatrix::zeros(dim, dim), |acc, p| acc + p);
        let q_sum = self.q.iter().fold(DVector::zeros(dim), |acc, q| acc + q);
        p_sum
            .cholesky()
            .map(|c| c.solve(&(-q_sum)))
            .ok_or_else(|| Error::NotStronglyConvex("sum of P_i is not positive definite".into()))
    }
}

/// One agent's training samples.
#[derive(Debug, Clone)]
pub struct AgentData {
    /// `m_i x p` feature rows.
    pub features: DMatrix<f64>,
    /// Labels in `{-1, +1}`.
    pub labels: Vec<f64>,
}

/// Regularized logistic loss over `(w, b)`:
/// `f_i(w, b) = sum_j ln(1 + exp(-(w^T c_ij + b) y_ij)) + xi/(2n) (||w||^2 [+ b^2])`.
///
/// The decision variable is laid out as `[w_0, ..., w_{p-1}, b]`.
#[derive(Debug, Clone)]
pub struct LogisticObjective {
    agents: Vec<AgentData>,
    features: usize,
    xi: f64,
    regularize_bias: bool,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

impl LogisticObjective {
    pub fn new(agents: Vec<AgentData>, xi: f64, regularize_bias: bool) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::InvalidInput("need at least one agent".into()));
        }
        if !(xi >= 0.0) {
            return Err(Error::InvalidInput(format!("regularizer xi = {xi} must be >= 0")));
        }
        let features = agents[0].features.ncols();
        for (i, a) in agents.iter().enumerate() {
            if a.features.nrows() == 0 {
                return Err(Error::InvalidInput(format!("agent {i} has no samples")));
            }
            if a.features.ncols() != features {
                return Err(Error::DimensionMismatch {
                    expected: features,
                    got: a.features.ncols(),
                });
            }
            if a.labels.len() != a.features.nrows() {
                return Err(Error::InvalidInput(format!(
                    "agent {i}: {} labels for {} samples",
                    a.labels.len(),
                    a.features.nrows()
                )));
            }
            if a.labels.iter().any(|&y| y != 1.0 && y != -1.0) {
                return Err(Error::InvalidInput(format!("agent {i}: labels must be -1 or +1")));
            }
        }
        Ok(LogisticObjective {
            agents,
            features,
            xi,
            regularize_bias,
        })
    }

    /// Gaussian features with variance 2 and fair-coin labels.
    pub fn random(
        n: usize,
        features: usize,
        samples_per_agent: usize,
        xi: f64,
        regularize_bias: bool,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 || features == 0 || samples_per_agent == 0 {
            return Err(Error::InvalidInput(
                "need n, feature count and samples per agent all >= 1".into(),
            ));
        }
        let mut rng = rng::stream(seed, Stream::Data);
        let normal = Normal::new(0.0, 2.0_f64.sqrt()).expect("valid std");
        let agents = (0..n)
            .map(|_| {
                let feats = DMatrix::from_fn(samples_per_agent, features, |_, _| normal.sample(&mut rng));
                let labels = (0..samples_per_agent)
                    .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                    .collect();
                AgentData {
                    features: feats,
                    labels,
                }
            })
            .collect();
        Self::new(agents, xi, regularize_bias)
    }

    pub fn agents(&self) -> &[AgentData] {
        &self.agents
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn regularize_bias(&self) -> bool {
        self.regularize_bias
    }

    pub fn num_features(&self) -> usize {
        self.features
    }

    fn reg(&self) -> f64 {
        self.xi / self.agents.len() as f64
    }

    /// Largest eigenvalue of `C~^T C~` where `C~` stacks `(c_ij, 1)` rows.
    fn augmented_gram_max(&self, agent: usize, with_bias: bool) -> f64 {
        let c = &self.agents[agent].features;
        let m = if with_bias {
            let mut aug = DMatrix::from_element(c.nrows(), c.ncols() + 1, 1.0);
            aug.view_mut((0, 0), (c.nrows(), c.ncols())).copy_from(c);
            aug
        } else {
            c.clone()
        };
        symmetric_extremes(&(m.transpose() * &m)).1
    }

    /// Constants over the `w` block only, for runs that leave `b`
    /// unregularized. Not valid for certificates over `(w, b)`.
    pub fn smoothness_w_block(&self) -> Result<SmoothnessInfo> {
        if self.xi <= 0.0 {
            return Err(Error::NotStronglyConvex("xi = 0".into()));
        }
        log::warn!("smoothness constants computed on the w block only (bias not regularized)");
        let reg = self.reg();
        let beta = (0..self.agents.len())
            .map(|i| 0.25 * self.augmented_gram_max(i, false) + reg)
            .fold(0.0, f64::max);
        Ok(SmoothnessInfo { alpha: reg, beta })
    }

    fn lipschitz_full(&self) -> f64 {
        let reg = self.reg();
        (0..self.agents.len())
            .map(|i| 0.25 * self.augmented_gram_max(i, true) + reg)
            .fold(0.0, f64::max)
    }

    /// Writes `agent,label,c0,...` rows.
    pub fn save_dataset_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("agent,label");
        for k in 0..self.features {
            out.push_str(&format!(",c{k}"));
        }
        out.push('\n');
        for (i, a) in self.agents.iter().enumerate() {
            for (r, y) in a.labels.iter().enumerate() {
                out.push_str(&format!("{i},{}", *y as i64));
                for k in 0..self.features {
                    out.push_str(&format!(",{:.17e}", a.features[(r, k)]));
                }
                out.push('\n');
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load_dataset_csv(path: impl AsRef<Path>, xi: f64, regularize_bias: bool) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut rows: Vec<(usize, f64, Vec<f64>)> = Vec::new();
        let mut width: Option<usize> = None;
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("agent") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() < 3 {
                return Err(err(lineno, "expected agent,label,features...".into()));
            }
            if *width.get_or_insert(fields.len()) != fields.len() {
                return Err(err(lineno, "inconsistent number of columns".into()));
            }
            let agent = fields[0]
                .parse()
                .map_err(|_| err(lineno, format!("invalid agent id {:?}", fields[0])))?;
            let label: f64 = fields[1]
                .parse()
                .map_err(|_| err(lineno, format!("invalid label {:?}", fields[1])))?;
            let feats = fields[2..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| err(lineno, format!("invalid feature {f:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push((agent, label, feats));
        }
        let n = rows
            .iter()
            .map(|r| r.0 + 1)
            .max()
            .ok_or_else(|| err(0, "empty dataset".into()))?;
        let p = width.unwrap_or(2) - 2;
        let mut per_agent: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); n];
        for (agent, label, feats) in rows {
            per_agent[agent].0.extend(feats);
            per_agent[agent].1.push(label);
        }
        let agents = per_agent
            .into_iter()
            .map(|(flat, labels)| AgentData {
                features: DMatrix::from_row_slice(labels.len(), p, &flat),
                labels,
            })
            .collect();
        Self::new(agents, xi, regularize_bias)
    }
}

impl Objective for LogisticObjective {
    fn n_agents(&self) -> usize {
        self.agents.len()
    }

    fn dim(&self) -> usize {
        self.features + 1
    }

    fn value(&self, agent: usize, x: &[f64]) -> Result<f64> {
        self.check_point(agent, x)?;
        let p = self.features;
        let (w, b) = (&x[..p], x[p]);
        let data = &self.agents[agent];
        let mut total = 0.0;
        for (r, y) in data.labels.iter().enumerate() {
            let z: f64 = (0..p).map(|k| w[k] * data.features[(r, k)]).sum::<f64>() + b;
            total += softplus(-y * z);
        }
        let mut sq: f64 = w.iter().map(|v| v * v).sum();
        if self.regularize_bias {
            sq += b * b;
        }
        Ok(total + 0.5 * self.reg() * sq)
    }

    fn gradient_into(&self, agent: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_point(agent, x)?;
        let p = self.features;
        let (w, b) = (&x[..p], x[p]);
        let data = &self.agents[agent];
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &y) in data.labels.iter().enumerate() {
            let z: f64 = (0..p).map(|k| w[k] * data.features[(r, k)]).sum::<f64>() + b;
            let coef = -y * sigmoid(-y * z);
            for (o, c) in out.iter_mut().zip(data.features.row(r).iter()) {
                *o += coef * c;
            }
            out[p] += coef;
        }
        let reg = self.reg();
        for (o, wk) in out.iter_mut().zip(w) {
            *o += reg * wk;
        }
        if self.regularize_bias {
            out[p] += reg * b;
        }
        Ok(())
    }

    fn smoothness(&self) -> Result<SmoothnessInfo> {
        if self.xi <= 0.0 {
            return Err(Error::NotStronglyConvex(
                "xi = 0 leaves the logistic loss without strong convexity; use xi > 0 and enable bias regularization"
                    .into(),
            ));
        }
        if !self.regularize_bias {
            return Err(Error::NotStronglyConvex(
                "the bias is not regularized, so alpha = 0 along b; enable bias regularization".into(),
            ));
        }
        Ok(SmoothnessInfo {
            alpha: self.reg(),
            beta: self.lipschitz_full(),
        })
    }

    fn centralized_optimum(&self, tol: f64) -> Result<DVector<f64>> {
        gradient_descent_optimum(self, self.lipschitz_full(), tol, OPTIMUM_MAX_ITERS)
    }
}
