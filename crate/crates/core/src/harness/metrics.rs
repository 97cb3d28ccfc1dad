//! Error metrics on stacked iterates and empirical rate estimation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Entries below this are treated as the floating-point floor by [`rate_fit`].
pub const RATE_FLOOR: f64 = 1e-14;
pub const DEFAULT_TAIL_FRACTION: f64 = 0.5;

/// `(1/n) sum_i ||x_i - x*||_2` over the rows of `x`.
pub fn residual(x: &DMatrix<f64>, x_star: &DVector<f64>) -> Result<f64> {
    if x.ncols() != x_star.len() {
        return Err(Error::DimensionMismatch {
            expected: x_star.len(),
            got: x.ncols(),
        });
    }
    if x.nrows() == 0 {
        return Err(Error::InvalidInput("no agents".into()));
    }
    let total: f64 = x.row_iter().map(|row| (row.transpose() - x_star).norm()).sum();
    Ok(total / x.nrows() as f64)
}

/// `max_i ||x_i - mean(x)||_2`.
pub fn consensus_error(x: &DMatrix<f64>) -> f64 {
    if x.nrows() == 0 {
        return 0.0;
    }
    let mean = x.row_mean();
    x.row_iter().map(|row| (row - &mean).norm()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    /// `exp(slope)` of the least-squares line through `ln r_k`.
    pub rho: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fits `ln r_k = c + s k` over the last `tail_fraction` of the sequence,
/// skipping entries below [`RATE_FLOOR`], and returns `exp(s)`.
pub fn rate_fit(residuals: &[f64], tail_fraction: f64) -> Result<RateFit> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "tail fraction {tail_fraction} must lie in (0, 1]"
        )));
    }
    let len = residuals.len();
    let tail = ((len as f64 * tail_fraction).ceil() as usize).min(len);
    let start = len - tail;
    let pts: Vec<(f64, f64)> = residuals[start..]
        .iter()
        .enumerate()
        .filter(|(_, &r)| r.is_finite() && r >= RATE_FLOOR)
        .map(|(i, &r)| ((start + i) as f64, r.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "rate fit needs at least 3 usable points, got {}",
            pts.len()
        )));
    }
    let m = pts.len() as f64;
    let kbar = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let lbar = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let (mut skk, mut skl, mut sll) = (0.0, 0.0, 0.0);
    for &(k, l) in &pts {
        skk += (k - kbar) * (k - kbar);
        skl += (k - kbar) * (l - lbar);
        sll += (l - lbar) * (l - lbar);
    }
    let slope = skl / skk;
    let sse: f64 = pts
        .iter()
        .map(|&(k, l)| {
            let e = l - (lbar + slope * (k - kbar));
            e * e
        })
        .sum();
    let r_squared = if sll > 0.0 { 1.0 - sse / sll } else { 1.0 };
    Ok(RateFit {
        rho: slope.exp(),
        r_squared,
        points: pts.len(),
    })
}
