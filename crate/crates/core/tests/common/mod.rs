//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use abtrack::objectives::Objective;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Transitive closure by Floyd-Warshall; strongly connected iff every pair
/// is reachable.
pub fn strongly_connected_closure(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
    }
    for &(s, d) in edges {
        reach[s][d] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                let via = reach[k].clone();
                for (dst, r) in reach[i].iter_mut().enumerate() {
                    *r |= via[dst];
                }
            }
        }
    }
    reach.iter().all(|r| r.iter().all(|&b| b))
}

/// Number of strongly connected components by Kosaraju's algorithm.
pub fn kosaraju_components(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut fwd = vec![Vec::new(); n];
    let mut rev = vec![Vec::new(); n];
    for &(s, d) in edges {
        fwd[s].push(d);
        rev[d].push(s);
    }
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        seen[start] = true;
        while let Some((v, idx)) = stack.pop() {
            if idx < fwd[v].len() {
                stack.push((v, idx + 1));
                let w = fwd[v][idx];
                if !seen[w] {
                    seen[w] = true;
                    stack.push((w, 0));
                }
            } else {
                order.push(v);
            }
        }
    }
    let mut comp = vec![usize::MAX; n];
    let mut count = 0;
    for &v in order.iter().rev() {
        if comp[v] != usize::MAX {
            continue;
        }
        let mut stack = vec![v];
        comp[v] = count;
        while let Some(x) = stack.pop() {
            for &w in &rev[x] {
                if comp[w] == usize::MAX {
                    comp[w] = count;
                    stack.push(w);
                }
            }
        }
        count += 1;
    }
    count
}

/// Stationary vector of a column-stochastic `m` by solving
/// `(m - I) v = 0` with the last equation replaced by `sum v = 1`.
pub fn stationary_direct(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut sys = m - DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        sys[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    sys.lu().solve(&rhs).expect("nonsingular stationary system")
}

/// `m^(2^squarings)` by repeated squaring.
pub fn power_by_squaring(m: &DMatrix<f64>, squarings: usize) -> DMatrix<f64> {
    let mut p = m.clone();
    for _ in 0..squarings {
        p = &p * &p;
    }
    p
}

/// `m^k` by binary exponentiation.
pub fn matrix_power(m: &DMatrix<f64>, mut k: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let mut result = DMatrix::<f64>::identity(n, n);
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        base = &base * &base;
        k >>= 1;
    }
    result
}

/// Largest eigenvalue modulus from the QR-based complex eigensolver.
pub fn spectral_radius_qr(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Spectral radius of a 3x3 matrix from the closed-form roots of its
/// characteristic polynomial `l^3 + b l^2 + c l + d`.
pub fn spectral_radius_cubic(j: &Matrix3<f64>) -> f64 {
    let tr = j.trace();
    let minors = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)] + j[(0, 0)] * j[(2, 2)] - j[(0, 2)] * j[(2, 0)]
        + j[(1, 1)] * j[(2, 2)]
        - j[(1, 2)] * j[(2, 1)];
    let det = j.determinant();
    let (b, c, d) = (-tr, minors, -det);
    // Depressed cubic t^3 + p t + q with l = t - b/3.
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let shift = -b / 3.0;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if disc > 0.0 {
        let s = disc.sqrt();
        let u = (-q / 2.0 + s).cbrt();
        let v = (-q / 2.0 - s).cbrt();
        let real = u + v + shift;
        // Complex pair: re = -(u+v)/2 + shift, im = (u-v) sqrt(3)/2.
        let re = -(u + v) / 2.0 + shift;
        let im = (u - v) * 3f64.sqrt() / 2.0;
        real.abs().max((re * re + im * im).sqrt())
    } else {
        let r = (-p / 3.0).max(0.0).sqrt();
        if r == 0.0 {
            return (shift + (-q).cbrt()).abs();
        }
        let arg = (3.0 * q / (2.0 * p * r)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        (0..3)
            .map(|k| (2.0 * r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + shift).abs())
            .fold(0.0, f64::max)
    }
}

/// Central finite-difference gradient of agent `i`'s objective.
pub fn fd_gradient(obj: &dyn Objective, agent: usize, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        xp[k] = x[k] + h;
        let fp = obj.value(agent, &xp).unwrap();
        xp[k] = x[k] - h;
        let fm = obj.value(agent, &xp).unwrap();
        xp[k] = x[k];
        g[k] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Gradient of `(1/n) sum_i f_i`.
pub fn mean_gradient(obj: &dyn Objective, x: &[f64]) -> DVector<f64> {
    let n = obj.n_agents();
    let mut g = DVector::zeros(obj.dim());
    for i in 0..n {
        g += DVector::from_vec(obj.gradient(i, x).unwrap());
    }
    g / n as f64
}

/// Minimizer of the average objective by Newton's method with a
/// finite-difference Hessian built from exact gradients.
pub fn newton_optimum(obj: &dyn Objective, iters: usize) -> DVector<f64> {
    let p = obj.dim();
    let mut x = DVector::zeros(p);
    let h = 1e-6;
    for _ in 0..iters {
        let g = mean_gradient(obj, x.as_slice());
        if g.norm() < 1e-15 {
            break;
        }
        let mut hess = DMatrix::zeros(p, p);
        for k in 0..p {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let col = (mean_gradient(obj, xp.as_slice()) - mean_gradient(obj, xm.as_slice())) / (2.0 * h);
            hess.set_column(k, &col);
        }
        let hess = (&hess + hess.transpose()) * 0.5;
        let step = hess.cholesky().expect("positive definite Hessian").solve(&g);
        x -= step;
    }
    x
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// Random edge set over `n` nodes (no self-loops), each edge kept with
/// probability `p`.
pub fn random_edges(rng: &mut impl Rng, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for s in 0..n {
        for d in 0..n {
            if s != d && rng.random_bool(p) {
                e.push((s, d));
            }
        }
    }
    e
}
