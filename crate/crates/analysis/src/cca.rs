//! Canonical correlation analysis via the SVD of the whitened cross-covariance.

use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{AnalysisError, Result};
use crate::linalg::{covariance, sorted_eigen, ColumnScaling};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcaOptions {
    /// Eigenvalues of each within-set covariance are floored at
    /// `ridge · λmax` before whitening. 0 disables the repair.
    pub ridge: f64,
}

impl Default for CcaOptions {
    fn default() -> Self {
        Self { ridge: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cca {
    /// Non-increasing, in [0, 1].
    pub correlations: Vec<f64>,
    /// `k` weight vectors of length `p`, applied to z-scored X.
    pub x_weights: Vec<Vec<f64>>,
    /// `k` weight vectors of length `q`, applied to z-scored Y.
    pub y_weights: Vec<Vec<f64>>,
}

const RANK_TOL: f64 = 1e-12;

/// `S^{-1/2}` with the eigenvalue floor; errors when fewer than `needed`
/// eigenvalues are numerically non-zero.
fn inverse_sqrt(s: DMatrix<f64>, ridge: f64, needed: usize) -> Result<DMatrix<f64>> {
    let (values, vectors) = sorted_eigen(s);
    let top = values.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Err(AnalysisError::NumericalRank { rank: 0, needed });
    }
    let rank = values.iter().filter(|&&v| v > RANK_TOL * top).count();
    if rank < needed {
        return Err(AnalysisError::NumericalRank { rank, needed });
    }
    let floor = ridge * top;
    let inv: Vec<f64> = values.iter().map(|&v| 1.0 / v.max(floor).max(RANK_TOL * top).sqrt()).collect();
    let d = vectors.nrows();
    Ok(DMatrix::from_fn(d, d, |i, j| {
        (0..d).map(|c| vectors[(i, c)] * inv[c] * vectors[(j, c)]).sum()
    }))
}

fn zscore(x: &DMatrix<f64>, which: &str) -> Result<DMatrix<f64>> {
    let s = ColumnScaling::fit(x);
    let dead = s.degenerate_columns();
    if !dead.is_empty() {
        return Err(AnalysisError::DegenerateVariance(format!("{which} columns {dead:?} are constant")));
    }
    Ok(s.apply(x))
}

pub fn cca(x: &DMatrix<f64>, y: &DMatrix<f64>, k: usize, opts: CcaOptions) -> Result<Cca> {
    let (n, p) = x.shape();
    let q = y.ncols();
    if y.nrows() != n {
        return Err(AnalysisError::invalid(format!("X has {n} rows, Y has {}", y.nrows())));
    }
    if n <= p.max(q) {
        return Err(AnalysisError::InsufficientData(format!("n = {n} must exceed max(p, q) = {}", p.max(q))));
    }
    if k == 0 || k > p.min(q) {
        return Err(AnalysisError::invalid(format!("k = {k} must lie in 1..={}", p.min(q))));
    }
    if !(opts.ridge >= 0.0 && opts.ridge.is_finite()) {
        return Err(AnalysisError::invalid(format!("ridge {} must be finite and ≥ 0", opts.ridge)));
    }
    let zx = zscore(x, "X")?;
    let zy = zscore(y, "Y")?;
    let wx = inverse_sqrt(covariance(&zx), opts.ridge, k)?;
    let wy = inverse_sqrt(covariance(&zy), opts.ridge, k)?;
    let sxy = zx.transpose() * &zy / (n as f64 - 1.0);
    let m = &wx * sxy * &wy;

    let svd = SVD::new(m, true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut correlations = Vec::with_capacity(k);
    let mut x_weights = Vec::with_capacity(k);
    let mut y_weights = Vec::with_capacity(k);
    for &c in order.iter().take(k) {
        correlations.push(svd.singular_values[c].clamp(0.0, 1.0));
        let mut a: Vec<f64> = (&wx * u.column(c)).iter().copied().collect();
        let mut b: Vec<f64> = (&wy * vt.row(c).transpose()).iter().copied().collect();
        // fix the joint sign so the largest X weight is positive
        let lead = a.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if lead < 0.0 {
            a.iter_mut().for_each(|v| *v = -*v);
            b.iter_mut().for_each(|v| *v = -*v);
        }
        x_weights.push(a);
        y_weights.push(b);
    }
    Ok(Cca {
        correlations,
        x_weights,
        y_weights,
    })
}
