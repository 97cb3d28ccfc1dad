//! Stochastic weight matrices on a digraph and the vector norms under which
//! their consensus error contracts.

use std::fmt::{self, Write as _};

use nalgebra::{DMatrix, DVector, Schur};

use crate::error::{Error, Result};
use crate::graph::Digraph;
use crate::linalg::op2norm;

/// Stochasticity tolerance for row/column sums.
pub const SUM_TOL: f64 = 1e-12;
pub const PERRON_TOL: f64 = 1e-14;
pub const PERRON_MAX_ITERS: usize = 100_000;
pub const DEFAULT_SLACK: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    RowStochastic,
    ColumnStochastic,
    DoublyStochastic,
}

impl fmt::Display for WeightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightKind::RowStochastic => "row",
            WeightKind::ColumnStochastic => "col",
            WeightKind::DoublyStochastic => "doubly",
        })
    }
}

#[derive(Debug, Clone)]
pub struct WeightMatrix {
    kind: WeightKind,
    entries: DMatrix<f64>,
    graph: Digraph,
}

impl WeightMatrix {
    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn graph(&self) -> &Digraph {
        &self.graph
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn is_row_stochastic(&self) -> bool {
        self.entries.row_iter().all(|r| (r.sum() - 1.0).abs() <= SUM_TOL)
    }

    pub fn is_column_stochastic(&self) -> bool {
        self.entries.column_iter().all(|c| (c.sum() - 1.0).abs() <= SUM_TOL)
    }

    /// Row-major CSV with a `# kind=<row|col|doubly> n=<n>` header.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# kind={} n={}\n", self.kind, self.n());
        for row in self.entries.row_iter() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }
}

/// `a_ij = 1/|N_i^in|` for every in-neighbor `j` of `i`.
pub fn row_stochastic_from(g: &Digraph) -> Result<WeightMatrix> {
    if !g.is_strongly_connected() {
        return Err(Error::NotStronglyConnected);
    }
    let n = g.n();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let w = 1.0 / g.in_degree(i) as f64;
        for &j in g.in_neighbors(i) {
            a[(i, j)] = w;
        }
    }
    Ok(WeightMatrix {
        kind: WeightKind::RowStochastic,
        entries: a,
        graph: g.clone(),
    })
}

/// `b_ij = 1/|N_j^out|` for every out-neighbor `i` of `j`.
pub fn column_stochastic_from(g: &Digraph) -> Result<WeightMatrix> {
    if !g.is_strongly_connected() {
        return Err(Error::NotStronglyConnected);
    }
    let n = g.n();
    let mut b = DMatrix::zeros(n, n);
    for j in 0..n {
        let w = 1.0 / g.out_degree(j) as f64;
        for &i in g.out_neighbors(j) {
            b[(i, j)] = w;
        }
    }
    Ok(WeightMatrix {
        kind: WeightKind::ColumnStochastic,
        entries: b,
        graph: g.clone(),
    })
}

/// Metropolis-Hastings weights on an undirected (symmetric) graph:
/// `w_ij = 1/(1 + max(d_i, d_j))` off the diagonal, where `d` counts
/// neighbors other than the node itself, and the diagonal takes the rest.
pub fn metropolis_from(g: &Digraph) -> Result<WeightMatrix> {
    if !g.is_symmetric() {
        return Err(Error::InvalidInput(
            "doubly-stochastic weights need an undirected graph".into(),
        ));
    }
    if !g.is_strongly_connected() {
        return Err(Error::NotStronglyConnected);
    }
    let n = g.n();
    let deg: Vec<usize> = (0..n).map(|i| g.in_degree(i) - 1).collect();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut off = 0.0;
        for &j in g.in_neighbors(i).iter().filter(|&&j| j != i) {
            let v = 1.0 / (1 + deg[i].max(deg[j])) as f64;
            w[(i, j)] = v;
            off += v;
        }
        w[(i, i)] = 1.0 - off;
    }
    Ok(WeightMatrix {
        kind: WeightKind::DoublyStochastic,
        entries: w,
        graph: g.clone(),
    })
}

/// Left Perron vector of a row-stochastic matrix, right Perron vector of a
/// column-stochastic one, and their inner product.
#[derive(Debug, Clone)]
pub struct PerronPair {
    pub pi_r: DVector<f64>,
    pub pi_c: DVector<f64>,
    pub inner: f64,
}

impl PerronPair {
    pub fn compute(a: &WeightMatrix, b: &WeightMatrix) -> Result<Self> {
        let pi_r = perron_left(a)?;
        let pi_c = perron_right(b)?;
        let inner = pi_r.dot(&pi_c);
        Ok(PerronPair { pi_r, pi_c, inner })
    }
}

/// Stationary vector of `A^T` with entries summing to one.
pub fn perron_left(a: &WeightMatrix) -> Result<DVector<f64>> {
    power_iterate_stochastic(&a.entries.transpose(), "left Perron vector")
}

/// Stationary vector of `B` with entries summing to one.
pub fn perron_right(b: &WeightMatrix) -> Result<DVector<f64>> {
    power_iterate_stochastic(&b.entries, "right Perron vector")
}

// `m` is column-stochastic here, so `m v` keeps the sum of `v`; we still
// renormalize each step to stop drift.
fn power_iterate_stochastic(m: &DMatrix<f64>, what: &'static str) -> Result<DVector<f64>> {
    let n = m.nrows();
    let mut v = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..PERRON_MAX_ITERS {
        let mut next = m * &v;
        let s = next.sum();
        next /= s;
        let change = (&next - &v).amax();
        v = next;
        if change <= PERRON_TOL {
            return Ok(v);
        }
    }
    Err(Error::NotConverged {
        what,
        iters: PERRON_MAX_ITERS,
    })
}

/// `1 pi_r^T` for row-stochastic (and doubly-stochastic) matrices,
/// `pi_c 1^T` for column-stochastic ones.
pub fn infinite_power(kind: WeightKind, perron: &PerronPair) -> DMatrix<f64> {
    match kind {
        WeightKind::RowStochastic | WeightKind::DoublyStochastic => {
            let n = perron.pi_r.len();
            DVector::from_element(n, 1.0) * perron.pi_r.transpose()
        }
        WeightKind::ColumnStochastic => {
            let n = perron.pi_c.len();
            &perron.pi_c * DVector::from_element(n, 1.0).transpose()
        }
    }
}

/// A vector norm `||v|| = ||T v||_2` under which `M - M_inf` has induced
/// norm `sigma < 1`.
///
/// Stacked `n x p` states are measured by applying `T` along the agent
/// dimension and taking the Frobenius norm, which is the Kronecker lift
/// `T (x) I_p` of the same norm.
#[derive(Debug, Clone)]
pub struct NormFrame {
    pub transform: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
    /// Induced norm of `M - M_inf`.
    pub sigma: f64,
    /// `||v||_2 <= to2 * ||v||`, i.e. `||T^{-1}||_2`.
    pub to2: f64,
    /// `||v|| <= from2 * ||v||_2`, i.e. `||T||_2`.
    pub from2: f64,
    /// Spectral radius of `M - M_inf`.
    pub rho: f64,
    /// Diagonal scaling parameter picked by the bisection.
    pub scale: f64,
}

impl NormFrame {
    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        (&self.transform * v).norm()
    }

    /// Frame norm of an `n x p` stacked state.
    pub fn norm_stacked(&self, x: &DMatrix<f64>) -> f64 {
        (&self.transform * x).norm()
    }
}

/// Cross-equivalence constants `(c, d)` with `||.||_1st <= c ||.||_2nd` and
/// `||.||_2nd <= d ||.||_1st`.
pub fn cross_constants(first: &NormFrame, second: &NormFrame) -> (f64, f64) {
    (
        op2norm(&(&first.transform * &second.inverse)),
        op2norm(&(&second.transform * &first.inverse)),
    )
}

const SCALE_MIN: f64 = 1e-8;
const BISECTION_STEPS: usize = 60;

/// Builds a contraction norm for `M - M_inf` from its real Schur form.
///
/// With `M - M_inf = Q U Q^T`, each 2x2 block of `U` (a complex pair) is
/// brought to the normal form `[[mu, nu], [-nu, mu]]` by a block similarity
/// `S`, so diagonal blocks have 2-norm equal to their eigenvalue modulus. A
/// block-geometric scaling `D_t = diag(t^b)` then shrinks everything above
/// the block diagonal. The largest `t` whose induced norm stays within
/// `rho + slack (1 - rho)` is found by bisection, and the transform is
/// `D_t^{-1} S^{-1} Q^T`, rescaled to unit spectral norm.
pub fn contraction_frame(m: &WeightMatrix, m_inf: &DMatrix<f64>, slack: f64) -> Result<NormFrame> {
    contraction_frame_for(&(m.matrix() - m_inf), slack)
}

/// Same as [`contraction_frame`] for an explicit error operator `E`.
pub fn contraction_frame_for(e: &DMatrix<f64>, slack: f64) -> Result<NormFrame> {
    if !(slack > 0.0 && slack < 1.0) {
        return Err(Error::InvalidInput(format!("slack {slack} not in (0, 1)")));
    }
    let n = e.nrows();
    let (mut q, mut u) = Schur::new(e.clone()).unpack();
    let blocks = split_real_blocks(&mut q, &mut u);

    let mut s = DMatrix::<f64>::identity(n, n);
    let mut s_inv = DMatrix::<f64>::identity(n, n);
    let mut block_of = vec![0usize; n];
    let mut rho: f64 = 0.0;
    for (bi, &(start, size)) in blocks.iter().enumerate() {
        block_of[start..start + size].fill(bi);
        if size == 1 {
            rho = rho.max(u[(start, start)].abs());
            continue;
        }
        let (a, b, c, d) = (
            u[(start, start)],
            u[(start, start + 1)],
            u[(start + 1, start)],
            u[(start + 1, start + 1)],
        );
        let mu = 0.5 * (a + d);
        let nu = (-(0.25 * (a - d) * (a - d) + b * c)).sqrt();
        rho = rho.max(mu.hypot(nu));
        // Columns p, q with B (p + iq) = (mu + i nu)(p + iq).
        let blk = nalgebra::Matrix2::new(b, 0.0, mu - a, nu);
        let blk = blk / blk.norm();
        let inv = blk
            .try_inverse()
            .ok_or_else(|| Error::Certificate("singular 2x2 normalizer".into()))?;
        for (r, cidx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            s[(start + r, start + cidx)] = blk[(r, cidx)];
            s_inv[(start + r, start + cidx)] = inv[(r, cidx)];
        }
    }
    if rho >= 1.0 {
        return Err(Error::Certificate(format!(
            "spectral radius {rho} of the consensus error operator is not below 1"
        )));
    }
    let normal = &s_inv * &u * &s;
    let target = rho + slack * (1.0 - rho);
    let scaled_norm = |t: f64| {
        let mut m = normal.clone();
        for i in 0..n {
            for j in 0..n {
                let p = block_of[j] as i32 - block_of[i] as i32;
                m[(i, j)] *= t.powi(p);
            }
        }
        op2norm(&m)
    };

    let t = if scaled_norm(1.0) <= target {
        1.0
    } else {
        if scaled_norm(SCALE_MIN) > target {
            return Err(Error::Certificate(format!(
                "no scaling in [{SCALE_MIN:e}, 1] reaches the target contraction {target}"
            )));
        }
        let (mut lo, mut hi) = (SCALE_MIN, 1.0);
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if scaled_norm(mid) <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let sigma = scaled_norm(t);

    let d_inv = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        block_of.iter().map(|&b| t.powi(-(b as i32))),
    ));
    let d = DMatrix::from_diagonal(&DVector::from_iterator(n, block_of.iter().map(|&b| t.powi(b as i32))));
    let mut transform = d_inv * s_inv * q.transpose();
    let mut inverse = q * s * d;
    let c = op2norm(&transform);
    transform /= c;
    inverse *= c;
    let to2 = op2norm(&inverse);
    Ok(NormFrame {
        transform,
        inverse,
        sigma,
        to2,
        from2: 1.0,
        rho,
        scale: t,
    })
}

/// Splits the quasi-triangular Schur factor into 1x1 and 2x2 diagonal
/// blocks. Any 2x2 block with real eigenvalues is triangularized with a
/// rotation (updating `q` and `u`) so every remaining 2x2 block holds a
/// complex-conjugate pair.
fn split_real_blocks(q: &mut DMatrix<f64>, u: &mut DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = u.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && u[(i + 1, i)] != 0.0 {
            let (a, b, c, d) = (u[(i, i)], u[(i, i + 1)], u[(i + 1, i)], u[(i + 1, i + 1)]);
            let disc = 0.25 * (a - d) * (a - d) + b * c;
            if disc >= 0.0 {
                let lambda = 0.5 * (a + d) + disc.sqrt();
                // Eigenvector of the block for `lambda`.
                let (vx, vy) = if (lambda - d).abs() >= (lambda - a).abs() {
                    (lambda - d, c)
                } else {
                    (b, lambda - a)
                };
                let r = vx.hypot(vy);
                let (cs, sn) = (vx / r, vy / r);
                let mut g = DMatrix::<f64>::identity(n, n);
                g[(i, i)] = cs;
                g[(i + 1, i)] = sn;
                g[(i, i + 1)] = -sn;
                g[(i + 1, i + 1)] = cs;
                *u = g.transpose() * &*u * &g;
                *q = &*q * &g;
                u[(i + 1, i)] = 0.0;
                blocks.push((i, 1));
                i += 1;
                continue;
            }
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }
    blocks
}
