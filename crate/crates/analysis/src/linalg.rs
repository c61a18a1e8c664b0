//! Small dense helpers shared by the multivariate methods.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{AnalysisError, Result};

/// Build an `n × d` matrix from equal-length rows.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != d) {
        return Err(AnalysisError::invalid(format!("row {i} has {} columns, expected {d}", rows[i].len())));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(AnalysisError::invalid("matrix has non-finite entries"));
    }
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

/// Column means and sample standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnScaling {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ColumnScaling {
    /// Fit on `x`; zero-variance columns get scale 0.
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mean: Vec<f64> = (0..x.ncols()).map(|j| x.column(j).sum() / n).collect();
        let scale = (0..x.ncols())
            .map(|j| {
                let ss: f64 = x.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum();
                (ss / (n - 1.0).max(1.0)).sqrt()
            })
            .collect();
        Self { mean, scale }
    }

    pub fn degenerate_columns(&self) -> Vec<usize> {
        // relative to the column magnitude, so rounding noise counts as constant
        self.scale
            .iter()
            .zip(&self.mean)
            .enumerate()
            .filter(|(_, (&s, &m))| s <= 1e-12 * m.abs().max(1.0))
            .map(|(j, _)| j)
            .collect()
    }

    /// Center, and divide by the scale where it is non-zero.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let degenerate = self.degenerate_columns();
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            if degenerate.contains(&j) {
                0.0
            } else {
                (x[(i, j)] - self.mean[j]) / self.scale[j]
            }
        })
    }

    pub fn center(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - self.mean[j])
    }
}

/// `XᵀX / (n − 1)` of an already centered matrix.
pub fn covariance(centered: &DMatrix<f64>) -> DMatrix<f64> {
    let n = centered.nrows() as f64;
    let mut c = centered.transpose() * centered / (n - 1.0);
    // enforce exact symmetry for the eigensolver
    for i in 0..c.nrows() {
        for j in 0..i {
            let v = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

/// Eigenpairs sorted by decreasing eigenvalue, each vector signed so that
/// its largest-magnitude entry is positive.
pub fn sorted_eigen(sym: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let cols: Vec<DVector<f64>> = order
        .iter()
        .map(|&i| {
            let v = eig.eigenvectors.column(i).into_owned();
            let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if lead < 0.0 {
                -v
            } else {
                v
            }
        })
        .collect();
    let n = cols.len();
    let vectors = if n == 0 {
        DMatrix::zeros(0, 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    (values, vectors)
}
