//! Bagged CART regression trees with impurity importances and OOB R².

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AnalysisError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestOptions {
    pub n_trees: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `max(1, d / 3)`.
    pub mtry: Option<usize>,
    pub seed: u64,
}

impl Default for ForestOptions {
    fn default() -> Self {
        Self {
            n_trees: 200,
            min_leaf: 5,
            mtry: None,
            seed: 0,
        }
    }
}

pub const MIN_ROWS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestResult {
    /// Non-negative, summing to 1.
    pub importances: Vec<f64>,
    /// Out-of-bag R²; `None` if no row was ever out of bag.
    pub oob_r2: Option<f64>,
}

impl ForestResult {
    /// Feature indices by decreasing importance, ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.importances.len()).collect();
        idx.sort_by(|&a, &b| self.importances[b].total_cmp(&self.importances[a]).then(a.cmp(&b)));
        idx
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[feature] <= threshold { left } else { right },
            }
        }
    }
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    min_leaf: usize,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    importance: Vec<f64>,
}

fn sse(sum: f64, sum_sq: f64, n: f64) -> f64 {
    (sum_sq - sum * sum / n).max(0.0)
}

impl Grower<'_> {
    fn grow(&mut self, rows: &mut [usize]) -> usize {
        let id = self.nodes.len();
        let n = rows.len() as f64;
        let (sum, sum_sq) = rows.iter().fold((0.0, 0.0), |(s, q), &r| (s + self.y[r], q + self.y[r] * self.y[r]));
        self.nodes.push(Node::Leaf(sum / n));
        let parent = sse(sum, sum_sq, n);
        if rows.len() < 2 * self.min_leaf || parent <= 1e-12 * sum_sq.max(1e-300) {
            return id;
        }
        let d = self.x[0].len();
        let mut best: Option<(f64, usize, f64)> = None;
        for f in sample(&mut self.rng, d, self.mtry) {
            rows.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let (mut ls, mut lq) = (0.0, 0.0);
            for i in 0..rows.len() - 1 {
                let v = self.y[rows[i]];
                ls += v;
                lq += v * v;
                let nl = i + 1;
                let nr = rows.len() - nl;
                if nl < self.min_leaf || nr < self.min_leaf {
                    continue;
                }
                let (lo, hi) = (self.x[rows[i]][f], self.x[rows[i + 1]][f]);
                if lo == hi {
                    continue;
                }
                let gain = parent - sse(ls, lq, nl as f64) - sse(sum - ls, sum_sq - lq, nr as f64);
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, lo + (hi - lo) / 2.0));
                }
            }
        }
        let Some((gain, feature, threshold)) = best.filter(|b| b.0 > 0.0) else {
            return id;
        };
        self.importance[feature] += gain;
        let split = partition(rows, |r| self.x[r][feature] <= threshold);
        let (l, r) = rows.split_at_mut(split);
        let left = self.grow(l);
        let right = self.grow(r);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

fn partition(rows: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let mut k = 0;
    for i in 0..rows.len() {
        if pred(rows[i]) {
            rows.swap(i, k);
            k += 1;
        }
    }
    k
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Importance of each column of `x` (rows of equal length) for predicting
/// `y`. Results depend only on the inputs and the seed, not on threading.
pub fn rf_importance(x: &[Vec<f64>], y: &[f64], opts: ForestOptions) -> Result<ForestResult> {
    let n = x.len();
    if n != y.len() {
        return Err(AnalysisError::invalid(format!("{n} rows but {} targets", y.len())));
    }
    if n < MIN_ROWS {
        return Err(AnalysisError::InsufficientData(format!("{n} rows, the forest needs {MIN_ROWS}")));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(AnalysisError::invalid("rows must be non-empty and of equal length"));
    }
    if opts.n_trees == 0 || opts.min_leaf == 0 {
        return Err(AnalysisError::invalid("n_trees and min_leaf must be positive"));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(AnalysisError::invalid("non-finite input"));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if sst <= (1e-12 * mean.abs().max(1.0)).powi(2) * n as f64 {
        return Err(AnalysisError::DegenerateVariance("target is constant".into()));
    }
    let mtry = opts.mtry.unwrap_or((d / 3).max(1)).clamp(1, d);

    // per tree: out-of-bag predictions (NaN where in-bag) and split gains
    type Grown = (Vec<f64>, Vec<(usize, f64)>);
    let grown: Vec<Grown> = (0..opts.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add((t as u64).wrapping_mul(GOLDEN)));
            let mut rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut in_bag = vec![false; n];
            rows.iter().for_each(|&r| in_bag[r] = true);
            let mut g = Grower {
                x,
                y,
                min_leaf: opts.min_leaf,
                mtry,
                rng,
                nodes: Vec::new(),
                importance: vec![0.0; d],
            };
            g.grow(&mut rows);
            let tree = Tree { nodes: g.nodes };
            let oob = (0..n).filter(|&i| !in_bag[i]).map(|i| (i, tree.predict(&x[i]))).collect();
            (g.importance, oob)
        })
        .collect();

    // ordered reduction keeps the sums independent of scheduling
    let mut importance = vec![0.0; d];
    let mut oob_sum = vec![0.0; n];
    let mut oob_count = vec![0usize; n];
    for (imp, oob) in &grown {
        importance.iter_mut().zip(imp).for_each(|(a, b)| *a += b);
        for &(i, p) in oob {
            oob_sum[i] += p;
            oob_count[i] += 1;
        }
    }
    let total: f64 = importance.iter().sum();
    if total <= 0.0 {
        return Err(AnalysisError::DegenerateVariance("no tree found an informative split".into()));
    }
    importance.iter_mut().for_each(|v| *v /= total);

    let scored: Vec<usize> = (0..n).filter(|&i| oob_count[i] > 0).collect();
    let oob_r2 = (scored.len() >= 2)
        .then(|| {
            let m = scored.iter().map(|&i| y[i]).sum::<f64>() / scored.len() as f64;
            let sst: f64 = scored.iter().map(|&i| (y[i] - m).powi(2)).sum();
            let sse: f64 = scored.iter().map(|&i| (y[i] - oob_sum[i] / oob_count[i] as f64).powi(2)).sum();
            (sst > 0.0).then(|| 1.0 - sse / sst)
        })
        .flatten();
    Ok(ForestResult {
        importances: importance,
        oob_r2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = (0..n).map(|i| (0..4).map(|j| ((i * (j + 3)) as f64 * 0.91).sin()).collect()).collect();
        let y = x.iter().map(|r| 3.0 * r[2]).collect();
        (x, y)
    }

    #[test]
    fn importances_normalized_and_deterministic() {
        let (x, y) = data(60);
        let opts = ForestOptions {
            n_trees: 30,
            seed: 5,
            ..ForestOptions::default()
        };
        let a = rf_importance(&x, &y, opts).unwrap();
        let b = rf_importance(&x, &y, opts).unwrap();
        assert_eq!(a, b);
        assert!((a.importances.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(a.importances.iter().all(|&v| v >= 0.0));
        assert_eq!(a.ranking()[0], 2);
        assert!(a.oob_r2.unwrap() > 0.5);
    }

    #[test]
    fn rejects_small_or_constant() {
        let (x, y) = data(10);
        assert!(matches!(rf_importance(&x, &y, ForestOptions::default()), Err(AnalysisError::InsufficientData(_))));
        let (x, _) = data(30);
        let y = vec![1.0; 30];
        assert!(matches!(
            rf_importance(&x, &y, ForestOptions::default()),
            Err(AnalysisError::DegenerateVariance(_))
        ));
    }
}
