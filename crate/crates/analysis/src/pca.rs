use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{AnalysisError, Result};
use crate::linalg::{covariance, sorted_eigen, ColumnScaling};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcaOptions {
    /// z-score columns first (correlation-matrix PCA).
    pub standardize: bool,
}

impl Default for PcaOptions {
    fn default() -> Self {
        Self { standardize: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    /// `k` rows of length `d`, orthonormal.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub mean: Vec<f64>,
    /// Column scales used (all 1 without standardization).
    pub scale: Vec<f64>,
}

impl Pca {
    /// Project rows onto the components.
    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), self.components.len(), |i, c| {
            self.components[c]
                .iter()
                .enumerate()
                .map(|(j, w)| {
                    let s = if self.scale[j] > 0.0 { self.scale[j] } else { 1.0 };
                    w * (x[(i, j)] - self.mean[j]) / s
                })
                .sum()
        })
    }
}

pub fn pca(x: &DMatrix<f64>, k: usize, opts: PcaOptions) -> Result<Pca> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(AnalysisError::InsufficientData(format!("{n} rows, PCA needs at least 2")));
    }
    if k == 0 || k > (n - 1).min(d) {
        return Err(AnalysisError::invalid(format!(
            "k = {k} must lie in 1..={} for a {n}×{d} matrix",
            (n - 1).min(d)
        )));
    }
    let scaling = ColumnScaling::fit(x);
    let (z, scale) = if opts.standardize {
        let dead = scaling.degenerate_columns();
        if !dead.is_empty() {
            warn!("PCA: constant columns {dead:?} contribute nothing");
        }
        let scale = scaling
            .scale
            .iter()
            .enumerate()
            .map(|(j, &s)| if dead.contains(&j) { 0.0 } else { s })
            .collect();
        (scaling.apply(x), scale)
    } else {
        (scaling.center(x), vec![1.0; d])
    };
    let cov = covariance(&z);
    let total: f64 = cov.trace();
    let (values, vectors) = sorted_eigen(cov);
    let explained_variance: Vec<f64> = values.iter().take(k).map(|v| v.max(0.0)).collect();
    let explained_variance_ratio = explained_variance
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    let components = (0..k).map(|c| vectors.column(c).iter().copied().collect()).collect();
    Ok(Pca {
        components,
        explained_variance,
        explained_variance_ratio,
        mean: scaling.mean,
        scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_through_origin() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 2.0, 4.0, -1.0, -2.0, 3.0, 6.0]);
        let p = pca(&x, 1, PcaOptions { standardize: false }).unwrap();
        assert!((p.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        let c = &p.components[0];
        let s = 5f64.sqrt();
        assert!((c[0] - 1.0 / s).abs() < 1e-12 && (c[1] - 2.0 / s).abs() < 1e-12);
    }

    #[test]
    fn standardized_line_is_diagonal() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let p = pca(&x, 1, PcaOptions::default()).unwrap();
        assert!((p.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        let h = 0.5f64.sqrt();
        assert!((p.components[0][0] - h).abs() < 1e-12 && (p.components[0][1] - h).abs() < 1e-12);
    }

    #[test]
    fn k_is_bounded() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.5, 3.0, 6.0]);
        assert!(pca(&x, 3, PcaOptions::default()).is_err());
        assert!(pca(&x, 0, PcaOptions::default()).is_err());
    }
}
