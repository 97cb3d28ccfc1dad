//! Small-gain certificate for geometric convergence of the tracking method.
//!
//! The three error norms
//!
//! ```text
//! t(k) = [ ||x - A_inf x||_A,  ||A_inf x - 1 (x) x*||_2,  ||y - B_inf y||_B ]
//! ```
//!
//! satisfy `t(k+1) <= J(eta) t(k)` entrywise for a nonnegative 3x3 matrix
//! `J(eta)` whose entries depend on the mixing matrices and the smoothness
//! constants. A positive vector `eps` with
//! `J(eta) eps < eps` certifies `rho(J(eta)) < 1`.

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::linalg::op2norm;
use crate::objectives::SmoothnessInfo;
use crate::solvers::Trace;
use crate::weights::{
    contraction_frame, cross_constants, infinite_power, NormFrame, PerronPair, WeightKind, WeightMatrix,
};

pub const CONTRACTION_CHECK_TOL: f64 = 1e-9;
pub const SPECTRAL_TOL: f64 = 1e-13;
pub const SPECTRAL_MAX_ITERS: usize = 100_000;

/// Spectral norms of the `n x n` operators appearing in the constants. The
/// Kronecker lift by `I_p` leaves them unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorNorms {
    pub i_minus_a_inf: f64,
    pub a_inf: f64,
    pub b_inf: f64,
    pub a_minus_i: f64,
}

#[derive(Debug, Clone)]
pub struct ContractionCert {
    pub frame_a: NormFrame,
    pub frame_b: NormFrame,
    pub perron: PerronPair,
    pub alpha: f64,
    pub beta: f64,
    pub n: usize,
    /// `a_1 ... a_9`.
    pub a: [f64; 9],
    pub norms: OperatorNorms,
    pub a_inf: DMatrix<f64>,
    pub b_inf: DMatrix<f64>,
    /// `(c, d)` with `||.||_A <= c ||.||_B` and `||.||_B <= d ||.||_A`.
    /// Reported only; the constants above do not use them.
    pub cross: (f64, f64),
}

impl ContractionCert {
    pub fn sigma_a(&self) -> f64 {
        self.frame_a.sigma
    }

    pub fn sigma_b(&self) -> f64 {
        self.frame_b.sigma
    }

    /// `n pi_r^T pi_c`, the effective gain on the averaged descent step.
    pub fn gain(&self) -> f64 {
        self.n as f64 * self.perron.inner
    }

    /// Error norms for stacked state `x`, `y` (both `n x p`).
    pub fn t_vector(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, x_star: &DVector<f64>) -> [f64; 3] {
        let ax = &self.a_inf * x;
        let mut dev = ax.clone();
        for mut row in dev.row_iter_mut() {
            row -= x_star.transpose();
        }
        [
            self.frame_a.norm_stacked(&(x - &ax)),
            dev.norm(),
            self.frame_b.norm_stacked(&(y - &self.b_inf * y)),
        ]
    }
}

/// Assembles the certificate constants.
pub fn build_cert(
    a: &WeightMatrix,
    frame_a: NormFrame,
    frame_b: NormFrame,
    perron: PerronPair,
    smoothness: SmoothnessInfo,
) -> Result<ContractionCert> {
    let n = a.n();
    for (name, s) in [("A", frame_a.sigma), ("B", frame_b.sigma)] {
        if !(s < 1.0) {
            return Err(Error::Certificate(format!("sigma_{name} = {s} is not below 1")));
        }
    }
    let SmoothnessInfo { alpha, beta } = smoothness;
    if !(alpha > 0.0 && alpha <= beta) {
        return Err(Error::Certificate(format!(
            "need 0 < alpha <= beta, got alpha = {alpha}, beta = {beta}"
        )));
    }
    let a_inf = infinite_power(WeightKind::RowStochastic, &perron);
    let b_inf = infinite_power(WeightKind::ColumnStochastic, &perron);
    let eye = DMatrix::<f64>::identity(n, n);
    let norms = OperatorNorms {
        i_minus_a_inf: op2norm(&(&eye - &a_inf)),
        a_inf: op2norm(&a_inf),
        b_inf: op2norm(&b_inf),
        a_minus_i: op2norm(&(a.matrix() - &eye)),
    };
    let rank_one = (n as f64).sqrt() * perron.pi_c.norm();
    if (norms.b_inf - rank_one).abs() > 1e-12 * rank_one.max(1.0) {
        return Err(Error::Certificate(format!(
            "||B_inf||_2 = {} differs from sqrt(n) ||pi_c||_2 = {rank_one}",
            norms.b_inf
        )));
    }
    let (m, g) = (frame_a.from2, frame_a.to2);
    let (l, h) = (frame_b.from2, frame_b.to2);
    let sb = frame_b.sigma;
    let nf = n as f64;
    let coef = [
        m * g * beta * norms.i_minus_a_inf * norms.b_inf,
        m * beta * norms.i_minus_a_inf * norms.b_inf,
        m * h * norms.i_minus_a_inf,
        nf * beta * g * perron.inner,
        h * norms.a_inf,
        g * sb * l * beta * norms.a_minus_i,
        g * sb * l * beta * beta * norms.b_inf,
        sb * l * beta * beta * norms.b_inf,
        h * sb * l * beta,
    ];
    let cross = cross_constants(&frame_a, &frame_b);
    Ok(ContractionCert {
        frame_a,
        frame_b,
        perron,
        alpha,
        beta,
        n,
        a: coef,
        norms,
        a_inf,
        b_inf,
        cross,
    })
}

/// Perron vectors, contraction frames and constants in one go.
pub fn certify(a: &WeightMatrix, b: &WeightMatrix, smoothness: SmoothnessInfo, slack: f64) -> Result<ContractionCert> {
    let perron = PerronPair::compute(a, b)?;
    let frame_a = contraction_frame(a, &infinite_power(WeightKind::RowStochastic, &perron), slack)?;
    let frame_b = contraction_frame(b, &infinite_power(WeightKind::ColumnStochastic, &perron), slack)?;
    build_cert(a, frame_a, frame_b, perron, smoothness)
}

/// `max(|1 - alpha g eta|, |1 - beta g eta|)` with `g = n pi_r^T pi_c`.
pub fn lambda_of(eta: f64, cert: &ContractionCert) -> Result<f64> {
    let upper = 2.0 / (cert.beta * cert.gain());
    if !(eta > 0.0 && eta < upper) {
        return Err(Error::StepSizeOutOfRange { eta, upper });
    }
    let g = cert.gain();
    Ok((1.0 - cert.alpha * g * eta)
        .abs()
        .max((1.0 - cert.beta * g * eta).abs()))
}

pub fn build_j(eta: f64, cert: &ContractionCert) -> Result<Matrix3<f64>> {
    let lambda = lambda_of(eta, cert)?;
    let a = &cert.a;
    Ok(Matrix3::new(
        cert.sigma_a() + a[0] * eta,
        a[1] * eta,
        a[2] * eta,
        a[3] * eta,
        lambda,
        a[4] * eta,
        a[5] + a[6] * eta,
        a[7] * eta,
        cert.sigma_b() + a[8] * eta,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonTriple {
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
}

impl EpsilonTriple {
    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.eps1, self.eps2, self.eps3)
    }

    /// Checks the feasibility constraints on `eps` strictly.
    pub fn validate(&self, cert: &ContractionCert) -> Result<()> {
        let a = &cert.a;
        if !(self.eps1 > 0.0 && self.eps2 > 0.0 && self.eps3 > 0.0) {
            return Err(Error::Certificate(format!("epsilon {self:?} is not positive")));
        }
        if a[5] > 0.0 && !(self.eps1 < (1.0 - cert.sigma_b()) * self.eps3 / a[5]) {
            return Err(Error::Certificate(format!(
                "eps1 = {} must be below (1 - sigma_B) eps3 / a6 = {}",
                self.eps1,
                (1.0 - cert.sigma_b()) * self.eps3 / a[5]
            )));
        }
        let lower = (a[3] * self.eps1 + a[4] * self.eps3) / (cert.alpha * cert.gain());
        if !(self.eps2 > lower) {
            return Err(Error::Certificate(format!(
                "eps2 = {} must exceed (a4 eps1 + a5 eps3) / (alpha n pi_r^T pi_c) = {lower}",
                self.eps2
            )));
        }
        Ok(())
    }
}

/// Midpoint choice: `eps3 = 1`, `eps1` half of its upper limit (1 when
/// `a6 = 0`), `eps2` twice its lower limit.
pub fn select_epsilon(cert: &ContractionCert) -> EpsilonTriple {
    let a = &cert.a;
    let eps3 = 1.0;
    let eps1 = if a[5] > 0.0 {
        0.5 * (1.0 - cert.sigma_b()) * eps3 / a[5]
    } else {
        1.0
    };
    let eps2 = 2.0 * (a[3] * eps1 + a[4] * eps3) / (cert.alpha * cert.gain());
    EpsilonTriple { eps1, eps2, eps3 }
}

fn ratio_or_inf(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        f64::INFINITY
    }
}

/// Largest step size covered by the certificate for a feasible `eps`.
pub fn eta_max(cert: &ContractionCert, eps: &EpsilonTriple) -> Result<f64> {
    eps.validate(cert)?;
    let a = &cert.a;
    let EpsilonTriple { eps1, eps2, eps3 } = *eps;
    let first = ratio_or_inf(eps1 * (1.0 - cert.sigma_a()), a[0] * eps1 + a[1] * eps2 + a[2] * eps3);
    let second = ratio_or_inf(
        (1.0 - cert.sigma_b()) * eps3 - eps1 * a[5],
        a[6] * eps1 + a[7] * eps2 + a[8] * eps3,
    );
    let third = 1.0 / (cert.beta * cert.gain());
    Ok(first.min(second).min(third))
}

/// `J eps < eps` entrywise, which certifies `rho(J) < 1` for nonnegative `J`.
pub fn lemma8_check(j: &Matrix3<f64>, eps: &Vector3<f64>) -> Result<bool> {
    if eps.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidInput(format!("epsilon {eps:?} must be positive")));
    }
    if j.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidInput("matrix must be nonnegative".into()));
    }
    let image = j * eps;
    Ok(image.iter().zip(eps.iter()).all(|(lhs, rhs)| lhs < rhs))
}

/// Perron root of a nonnegative 3x3 matrix.
///
/// Nilpotent inputs return 0. Otherwise power iteration runs on `J + I`
/// from the all-ones vector; the shift makes the Perron root strictly
/// dominant in modulus even when `J` is periodic.
pub fn spectral_radius(j: &Matrix3<f64>) -> Result<f64> {
    if j.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidInput("matrix must be nonnegative and finite".into()));
    }
    let ones = Vector3::from_element(1.0);
    if (j * j * j * ones).iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let shifted = j + Matrix3::identity();
    let mut v = ones;
    let mut estimate = f64::NAN;
    for _ in 0..SPECTRAL_MAX_ITERS {
        let w = shifted * v;
        let next = w.amax();
        v = w / next;
        if (next - estimate).abs() <= SPECTRAL_TOL {
            return Ok((next - 1.0).max(0.0));
        }
        estimate = next;
    }
    Err(Error::NotConverged {
        what: "spectral radius power iteration",
        iters: SPECTRAL_MAX_ITERS,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub k: usize,
    pub component: usize,
    pub observed: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub eta: f64,
    pub steps_checked: usize,
    pub violations: Vec<Violation>,
    /// Largest `t_i(k+1) / (J t(k))_i` seen.
    pub worst_ratio: f64,
}

impl ContractionReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn first_violation(&self) -> Option<&Violation> {
        self.violations.first()
    }
}

impl fmt::Display for ContractionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "checked {} steps at eta = {:e}: {} violation(s), worst ratio {:.6}",
            self.steps_checked,
            self.eta,
            self.violations.len(),
            self.worst_ratio
        )?;
        if let Some(v) = self.first_violation() {
            write!(
                f,
                "; first at k = {} component {}: {:e} > {:e}",
                v.k, v.component, v.observed, v.bound
            )?;
        }
        Ok(())
    }
}

/// Checks `t(k+1) <= J(eta) t(k) + tol ||t(k)||` along a recorded trace.
pub fn check_trace_contraction(trace: &Trace, cert: &ContractionCert, eta: f64) -> Result<ContractionReport> {
    let ts = trace
        .t_vectors()
        .ok_or_else(|| Error::InvalidInput("trace was recorded without a certificate".into()))?;
    let j = build_j(eta, cert)?;
    let mut report = ContractionReport {
        eta,
        steps_checked: 0,
        violations: Vec::new(),
        worst_ratio: 0.0,
    };
    for (w, rows) in ts.windows(2).zip(trace.rows.windows(2)) {
        let prev = Vector3::from(w[0]);
        let next = Vector3::from(w[1]);
        let bound = j * prev;
        let slack = CONTRACTION_CHECK_TOL * prev.norm();
        for c in 0..3 {
            if bound[c] > 0.0 {
                report.worst_ratio = report.worst_ratio.max(next[c] / bound[c]);
            }
            if next[c] > bound[c] + slack {
                report.violations.push(Violation {
                    k: rows[1].k,
                    component: c,
                    observed: next[c],
                    bound: bound[c],
                });
            }
        }
        report.steps_checked += 1;
    }
    Ok(report)
}

/// Everything the `certify` command prints.
#[derive(Debug, Clone)]
pub struct CertificateSummary {
    pub cert: ContractionCert,
    pub eps: EpsilonTriple,
    pub eta_max: f64,
    pub eta: f64,
    pub j: Matrix3<f64>,
    pub rho_j: f64,
    pub lemma8: bool,
}

impl CertificateSummary {
    /// Evaluates the certificate at `eta`, or at `eta_max / 2` when `None`.
    pub fn new(cert: ContractionCert, eta: Option<f64>) -> Result<Self> {
        let eps = select_epsilon(&cert);
        let eta_max = eta_max(&cert, &eps)?;
        let eta = eta.unwrap_or(0.5 * eta_max);
        let j = build_j(eta, &cert)?;
        let rho_j = spectral_radius(&j)?;
        let lemma8 = lemma8_check(&j, &eps.as_vector())?;
        Ok(CertificateSummary {
            cert,
            eps,
            eta_max,
            eta,
            j,
            rho_j,
            lemma8,
        })
    }

    pub fn key_values(&self) -> Vec<(String, String)> {
        let c = &self.cert;
        let mut kv = vec![
            ("n".to_string(), c.n.to_string()),
            ("alpha".into(), fmt_f(c.alpha)),
            ("beta".into(), fmt_f(c.beta)),
            ("sigma_A".into(), fmt_f(c.sigma_a())),
            ("sigma_B".into(), fmt_f(c.sigma_b())),
            ("rho_A".into(), fmt_f(c.frame_a.rho)),
            ("rho_B".into(), fmt_f(c.frame_b.rho)),
            ("m".into(), fmt_f(c.frame_a.from2)),
            ("g".into(), fmt_f(c.frame_a.to2)),
            ("l".into(), fmt_f(c.frame_b.from2)),
            ("h".into(), fmt_f(c.frame_b.to2)),
            ("c".into(), fmt_f(c.cross.0)),
            ("d".into(), fmt_f(c.cross.1)),
            ("pi_r_dot_pi_c".into(), fmt_f(c.perron.inner)),
        ];
        for (i, v) in c.a.iter().enumerate() {
            kv.push((format!("a{}", i + 1), fmt_f(*v)));
        }
        kv.extend([
            ("eps1".into(), fmt_f(self.eps.eps1)),
            ("eps2".into(), fmt_f(self.eps.eps2)),
            ("eps3".into(), fmt_f(self.eps.eps3)),
            ("eta_max".into(), fmt_f(self.eta_max)),
            ("eta".into(), fmt_f(self.eta)),
            ("rho_J".into(), fmt_f(self.rho_j)),
            ("lemma8".into(), if self.lemma8 { "PASS" } else { "FAIL" }.into()),
        ]);
        kv
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:.17e}")
}

impl fmt::Display for CertificateSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.cert;
        writeln!(f, "convergence certificate (n = {})", c.n)?;
        writeln!(f, "  alpha = {:.6e}  beta = {:.6e}", c.alpha, c.beta)?;
        writeln!(
            f,
            "  sigma_A = {:.6}  (rho {:.6})   sigma_B = {:.6}  (rho {:.6})",
            c.sigma_a(),
            c.frame_a.rho,
            c.sigma_b(),
            c.frame_b.rho
        )?;
        writeln!(
            f,
            "  m = {:.4e}  g = {:.4e}  l = {:.4e}  h = {:.4e}  pi_r.pi_c = {:.6}",
            c.frame_a.from2, c.frame_a.to2, c.frame_b.from2, c.frame_b.to2, c.perron.inner
        )?;
        for (i, v) in c.a.iter().enumerate() {
            writeln!(f, "  a{} = {:.6e}", i + 1, v)?;
        }
        writeln!(
            f,
            "  eps = ({:.6e}, {:.6e}, {:.6e})",
            self.eps.eps1, self.eps.eps2, self.eps.eps3
        )?;
        writeln!(f, "  eta_max = {:.6e}", self.eta_max)?;
        writeln!(f, "  rho(J({:.6e})) = {:.15}", self.eta, self.rho_j)?;
        writeln!(f, "  J eps < eps: {}", if self.lemma8 { "PASS" } else { "FAIL" })
    }
}
