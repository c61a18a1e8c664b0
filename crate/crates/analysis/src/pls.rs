//! PLS2 regression fitted with NIPALS, scored by cross-validated R².

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{AnalysisError, Result};
use crate::linalg::ColumnScaling;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlsOptions {
    pub components: usize,
    /// `Some(f)`: interleaved f-fold cross-validation (row `i` held out in
    /// fold `i mod f`). `None`: score on the training data.
    pub folds: Option<usize>,
}

impl Default for PlsOptions {
    fn default() -> Self {
        Self {
            components: 2,
            folds: Some(5),
        }
    }
}

/// A fitted model; [`PlsModel::predict`] works in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct PlsModel {
    x_scaling: ColumnScaling,
    y_mean: Vec<f64>,
    y_scale: Vec<f64>,
    /// `p × q` coefficients on standardized X, standardized Y.
    coef: DMatrix<f64>,
}

const MAX_ITER: usize = 500;
const CONVERGED: f64 = 1e-12;

impl PlsModel {
    pub fn fit(x: &DMatrix<f64>, y: &DMatrix<f64>, k: usize) -> Result<Self> {
        let (n, p) = x.shape();
        let q = y.ncols();
        if y.nrows() != n {
            return Err(AnalysisError::invalid(format!("X has {n} rows, Y has {}", y.nrows())));
        }
        if n < 2 {
            return Err(AnalysisError::InsufficientData(format!("{n} rows, PLS needs at least 2")));
        }
        if k == 0 || k > p {
            return Err(AnalysisError::invalid(format!("k = {k} must lie in 1..={p}")));
        }
        let x_scaling = ColumnScaling::fit(x);
        let dead = x_scaling.degenerate_columns();
        if !dead.is_empty() {
            return Err(AnalysisError::DegenerateVariance(format!("predictor columns {dead:?} are constant")));
        }
        let y_scaling = ColumnScaling::fit(y);
        let dead_y = y_scaling.degenerate_columns();
        if dead_y.len() == q {
            return Err(AnalysisError::DegenerateVariance("every target is constant".into()));
        }
        let mut xr = x_scaling.apply(x);
        // constant targets standardize to zero and drop out of the fit
        let mut yr = y_scaling.apply(y);
        let x_norm = xr.norm();

        let mut w_mat = DMatrix::zeros(p, k);
        let mut p_mat = DMatrix::zeros(p, k);
        let mut c_mat = DMatrix::zeros(q, k);
        for a in 0..k {
            let start = (0..q)
                .max_by(|&i, &j| yr.column(i).norm_squared().total_cmp(&yr.column(j).norm_squared()))
                .unwrap_or(0);
            let mut u: DVector<f64> = yr.column(start).into_owned();
            let mut t = DVector::zeros(n);
            let mut w = DVector::zeros(p);
            let mut c = DVector::zeros(q);
            for _ in 0..MAX_ITER {
                w = xr.transpose() * &u;
                let wn = w.norm();
                if wn <= 1e-12 * x_norm.max(1.0) {
                    return Err(AnalysisError::invalid(format!(
                        "component {} has no remaining covariance; k = {k} exceeds the usable rank",
                        a + 1
                    )));
                }
                w /= wn;
                let t_new = &xr * &w;
                let tt = t_new.norm_squared();
                c = yr.transpose() * &t_new / tt;
                let cc = c.norm_squared();
                u = if cc > 0.0 { &yr * &c / cc } else { t_new.clone() };
                let delta = (&t_new - &t).norm();
                t = t_new;
                if delta <= CONVERGED * t.norm().max(1e-300) {
                    break;
                }
            }
            let tt = t.norm_squared();
            let load = xr.transpose() * &t / tt;
            xr -= &t * load.transpose();
            yr -= &t * c.transpose();
            w_mat.set_column(a, &w);
            p_mat.set_column(a, &load);
            c_mat.set_column(a, &c);
        }
        let ptw = p_mat.transpose() * &w_mat;
        let inv = ptw
            .try_inverse()
            .ok_or(AnalysisError::NumericalRank { rank: 0, needed: k })?;
        let coef = w_mat * inv * c_mat.transpose();
        Ok(Self {
            y_scale: y_scaling.scale.clone(),
            y_mean: y_scaling.mean,
            x_scaling,
            coef,
        })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let z = self.x_scaling.apply(x) * &self.coef;
        DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| self.y_mean[j] + z[(i, j)] * self.y_scale[j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlsResult {
    pub components: usize,
    pub folds: Option<usize>,
    /// One entry per target; `None` where the target has no variance.
    pub r2: Vec<Option<f64>>,
}

/// Fit and score. With folds, every row is predicted by a model that never
/// saw it and R² pools the squared errors across folds.
pub fn pls_regression(x: &DMatrix<f64>, y: &DMatrix<f64>, opts: PlsOptions) -> Result<PlsResult> {
    let n = x.nrows();
    let q = y.ncols();
    let predicted = match opts.folds {
        None => PlsModel::fit(x, y, opts.components)?.predict(x),
        Some(f) => {
            if f < 2 || f > n {
                return Err(AnalysisError::invalid(format!("{f} folds for {n} rows")));
            }
            let mut out = DMatrix::zeros(n, q);
            for fold in 0..f {
                let train: Vec<usize> = (0..n).filter(|i| i % f != fold).collect();
                let test: Vec<usize> = (0..n).filter(|i| i % f == fold).collect();
                let model = PlsModel::fit(&x.select_rows(&train), &y.select_rows(&train), opts.components)?;
                let pred = model.predict(&x.select_rows(&test));
                for (r, &i) in test.iter().enumerate() {
                    out.set_row(i, &pred.row(r));
                }
            }
            out
        }
    };
    let r2 = (0..q)
        .map(|j| {
            let col = y.column(j);
            let mean = col.mean();
            let sst: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
            if sst <= (1e-12 * mean.abs().max(1.0)).powi(2) * n as f64 {
                return None;
            }
            let sse: f64 = col.iter().zip(predicted.column(j).iter()).map(|(a, b)| (a - b).powi(2)).sum();
            Some((1.0 - sse / sst).min(1.0))
        })
        .collect();
    Ok(PlsResult {
        components: opts.components,
        folds: opts.folds,
        r2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_no_folds() {
        let x = DMatrix::from_fn(20, 1, |i, _| i as f64 * 0.3 - 1.0);
        let y = &x * 2.0;
        let r = pls_regression(&x, &y, PlsOptions { components: 1, folds: None }).unwrap();
        assert!((r.r2[0].unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_predictor_is_degenerate() {
        let x = DMatrix::from_fn(10, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DMatrix::from_fn(10, 1, |i, _| i as f64);
        assert!(matches!(
            pls_regression(&x, &y, PlsOptions::default()),
            Err(AnalysisError::DegenerateVariance(_))
        ));
    }

    #[test]
    fn constant_target_reports_none() {
        let x = DMatrix::from_fn(20, 2, |i, j| ((i * (j + 1)) as f64).sin());
        let y = DMatrix::from_fn(20, 2, |i, j| if j == 0 { 4.0 } else { x[(i, 0)] });
        let r = pls_regression(&x, &y, PlsOptions { components: 1, folds: None }).unwrap();
        assert_eq!(r.r2[0], None);
        assert!(r.r2[1].unwrap() > 0.5);
    }
}
