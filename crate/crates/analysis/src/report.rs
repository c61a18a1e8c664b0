//! The analysis report: a JSON document plus plain-text tables.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AnalysisError, Result};

pub const REPORT_VERSION: u32 = 1;

/// A method that either ran or was skipped because its preconditions
/// did not hold for this dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome<T> {
    Done(T),
    Skipped(String),
}

impl<T> Outcome<T> {
    pub fn done(&self) -> Option<&T> {
        match self {
            Outcome::Done(v) => Some(v),
            Outcome::Skipped(_) => None,
        }
    }

    pub(crate) fn from_result(r: Result<T>) -> Self {
        match r {
            Ok(v) => Outcome::Done(v),
            Err(e) => Outcome::Skipped(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub version: u32,
    pub segments: usize,
    pub dropped_segments: usize,
    pub segment_s: f64,
    /// Number of defined correlation tests, for a Bonferroni threshold.
    pub n_tests: usize,
    pub library_hash: String,
    pub weights_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub energy: String,
    pub feature: String,
    /// `None` when either column is constant.
    pub r: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSummary {
    pub columns: Vec<String>,
    pub explained_variance_ratio: Vec<f64>,
    /// One loading vector per component, over `columns`.
    pub loadings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaSummary {
    pub correlations: Vec<f64>,
    pub energy_weights: Vec<Vec<f64>>,
    /// Weights over the leading audio principal components.
    pub audio_weights: Vec<Vec<f64>>,
    pub audio_components: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlsSummary {
    pub components: usize,
    pub folds: Option<usize>,
    pub r2: Vec<(String, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestSummary {
    pub oob_r2: Option<f64>,
    /// Features by decreasing importance.
    pub ranking: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestTarget {
    pub target: String,
    pub outcome: Outcome<ForestSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub metadata: ReportMetadata,
    pub correlations: Vec<CorrelationCell>,
    pub pca_energy: Outcome<PcaSummary>,
    pub pca_audio: Outcome<PcaSummary>,
    pub cca: Outcome<CcaSummary>,
    pub pls: Outcome<PlsSummary>,
    pub forest: Vec<ForestTarget>,
}

impl AnalysisReport {
    pub fn correlation(&self, energy: &str, feature: &str) -> Option<&CorrelationCell> {
        self.correlations.iter().find(|c| c.energy == energy && c.feature == feature)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|source| AnalysisError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| AnalysisError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Human-readable tables. Correlations are listed strongest first.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let m = &self.metadata;
        let _ = writeln!(
            out,
            "Session analysis: {} segments of {} s ({} dropped), {} correlation tests (Bonferroni α = 0.05/{})",
            m.segments, m.segment_s, m.dropped_segments, m.n_tests, m.n_tests.max(1)
        );

        let _ = writeln!(out, "\n== Correlations (|r| descending) ==");
        let _ = writeln!(out, "{:<14} {:<24} {:>8} {:>10}", "energy", "feature", "r", "p");
        let mut cells: Vec<&CorrelationCell> = self.correlations.iter().collect();
        cells.sort_by(|a, b| {
            let key = |c: &CorrelationCell| c.r.map_or(-1.0, f64::abs);
            key(b).total_cmp(&key(a))
        });
        for c in cells {
            match (c.r, c.p) {
                (Some(r), Some(p)) => {
                    let _ = writeln!(out, "{:<14} {:<24} {:>8.3} {:>10.2e}", c.energy, c.feature, r, p);
                }
                _ => {
                    let _ = writeln!(out, "{:<14} {:<24} {:>8} {:>10}", c.energy, c.feature, "undef", "-");
                }
            }
        }

        for (title, pca) in [("movement", &self.pca_energy), ("audio", &self.pca_audio)] {
            let _ = writeln!(out, "\n== PCA ({title}) ==");
            match pca {
                Outcome::Done(s) => {
                    for (i, (ratio, load)) in s.explained_variance_ratio.iter().zip(&s.loadings).enumerate() {
                        let top = top_loadings(&s.columns, load, 3);
                        let _ = writeln!(out, "PC{:<2} {:>6.1}%  {}", i + 1, ratio * 100.0, top);
                    }
                }
                Outcome::Skipped(why) => {
                    let _ = writeln!(out, "skipped: {why}");
                }
            }
        }

        let _ = writeln!(out, "\n== CCA ==");
        match &self.cca {
            Outcome::Done(s) => {
                let _ = writeln!(out, "audio reduced to {} principal components", s.audio_components);
                for (i, r) in s.correlations.iter().enumerate() {
                    let _ = writeln!(out, "pair {:<2} ρ = {:.3}", i + 1, r);
                }
            }
            Outcome::Skipped(why) => {
                let _ = writeln!(out, "skipped: {why}");
            }
        }

        let _ = writeln!(out, "\n== PLS R² ==");
        match &self.pls {
            Outcome::Done(s) => {
                let folds = s.folds.map_or("training fit".to_string(), |f| format!("{f}-fold CV"));
                let _ = writeln!(out, "{} components, {folds}", s.components);
                let mut rows: Vec<&(String, Option<f64>)> = s.r2.iter().collect();
                rows.sort_by(|a, b| b.1.unwrap_or(f64::NEG_INFINITY).total_cmp(&a.1.unwrap_or(f64::NEG_INFINITY)));
                for (name, r2) in rows {
                    match r2 {
                        Some(v) => {
                            let _ = writeln!(out, "{name:<24} {v:>8.3}");
                        }
                        None => {
                            let _ = writeln!(out, "{name:<24} {:>8}", "undef");
                        }
                    }
                }
            }
            Outcome::Skipped(why) => {
                let _ = writeln!(out, "skipped: {why}");
            }
        }

        let _ = writeln!(out, "\n== Random forest ==");
        for t in &self.forest {
            match &t.outcome {
                Outcome::Done(s) => {
                    let r2 = s.oob_r2.map_or("undef".to_string(), |v| format!("{v:.3}"));
                    let top: Vec<String> = s.ranking.iter().take(5).map(|(n, v)| format!("{n} {v:.3}")).collect();
                    let _ = writeln!(out, "{:<14} OOB R² {r2:>7}  {}", t.target, top.join(", "));
                }
                Outcome::Skipped(why) => {
                    let _ = writeln!(out, "{:<14} skipped: {why}", t.target);
                }
            }
        }
        out
    }
}

fn top_loadings(names: &[String], load: &[f64], k: usize) -> String {
    let mut idx: Vec<usize> = (0..load.len()).collect();
    idx.sort_by(|&a, &b| load[b].abs().total_cmp(&load[a].abs()));
    idx.iter()
        .take(k)
        .map(|&i| format!("{} {:+.2}", names[i], load[i]))
        .collect::<Vec<_>>()
        .join(", ")
}
