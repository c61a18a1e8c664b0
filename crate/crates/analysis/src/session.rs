//! The full battery over one session.

use kinetune_core::engine::SessionLog;
use kinetune_core::library::ClipLibrary;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::cca::{cca, CcaOptions};
use crate::correlation::pearson;
use crate::dataset::{SessionDataset, SEGMENT_S};
use crate::error::{AnalysisError, Result};
use crate::forest::{rf_importance, ForestOptions};
use crate::linalg::ColumnScaling;
use crate::pca::{pca, PcaOptions};
use crate::pls::{pls_regression, PlsOptions};
use crate::report::{
    AnalysisReport, CcaSummary, CorrelationCell, ForestSummary, ForestTarget, Outcome, PcaSummary, PlsSummary,
    ReportMetadata, REPORT_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub seed: u64,
    pub pls: PlsOptions,
    pub forest_trees: usize,
    pub cca: CcaOptions,
    /// Upper bound on audio principal components kept for PCA and CCA.
    pub audio_components: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            pls: PlsOptions::default(),
            forest_trees: ForestOptions::default().n_trees,
            cca: CcaOptions::default(),
            audio_components: 8,
        }
    }
}

/// Segment the render, rebuild energy statistics from the logged pose data
/// and run every method. Methods whose preconditions fail on this dataset
/// are reported as skipped rather than failing the whole report.
pub fn analyze_session(
    log: &SessionLog,
    library: &ClipLibrary,
    audio: &[f32],
    opts: &AnalysisOptions,
) -> Result<AnalysisReport> {
    let library_hash = library.content_hash();
    if library_hash != log.header.library_hash {
        warn!("library content differs from the one the session was recorded with");
    }
    let data = SessionDataset::from_session(log, audio)?;
    let mut report = analyze_dataset(&data, opts)?;
    report.metadata.library_hash = log.header.library_hash.clone();
    report.metadata.weights_hash = log.header.weights_hash.clone();
    Ok(report)
}

fn pca_summary(x: &nalgebra::DMatrix<f64>, names: &[String], k: usize) -> Result<PcaSummary> {
    let p = pca(x, k, PcaOptions::default())?;
    Ok(PcaSummary {
        columns: names.to_vec(),
        explained_variance_ratio: p.explained_variance_ratio,
        loadings: p.components,
    })
}

pub fn analyze_dataset(data: &SessionDataset, opts: &AnalysisOptions) -> Result<AnalysisReport> {
    let n = data.len();
    if n < 3 {
        return Err(AnalysisError::InsufficientData(format!("{n} usable segments, need at least 3")));
    }
    let e = data.energy_matrix();
    let f = data.feature_matrix();

    let mut correlations = Vec::with_capacity(data.energy_names.len() * data.feature_names.len());
    for (i, en) in data.energy_names.iter().enumerate() {
        let x = data.energy_column(i);
        for (j, fname) in data.feature_names.iter().enumerate() {
            let c = pearson(&x, &data.feature_column(j));
            correlations.push(CorrelationCell {
                energy: en.clone(),
                feature: fname.clone(),
                r: c.as_ref().ok().map(|c| c.r),
                p: c.as_ref().ok().map(|c| c.p),
            });
        }
    }
    let n_tests = correlations.iter().filter(|c| c.r.is_some()).count();

    let pca_energy = Outcome::from_result(pca_summary(&e, &data.energy_names, e.ncols().min(n - 1)));
    let k_audio = opts.audio_components.min(n - 1).min(f.ncols());
    let pca_audio = Outcome::from_result(pca_summary(&f, &data.feature_names, k_audio));

    // 47 audio columns exceed the segment count of any realistic session, so
    // CCA runs against the leading audio principal-component scores
    let cca_out = Outcome::from_result((|| {
        let p = e.ncols();
        let q = opts.audio_components.min(f.ncols()).min(n.saturating_sub(p + 2));
        if q == 0 {
            return Err(AnalysisError::InsufficientData(format!("{n} segments leave no room for CCA")));
        }
        let reduced = pca(&f, q, PcaOptions::default())?;
        let scores = reduced.transform(&f);
        let scaling = ColumnScaling::fit(&e);
        let live: Vec<usize> = (0..p).filter(|j| !scaling.degenerate_columns().contains(j)).collect();
        if live.is_empty() {
            return Err(AnalysisError::DegenerateVariance("every energy column is constant".into()));
        }
        let ex = e.select_columns(&live);
        let k = live.len().min(q);
        let c = cca(&ex, &scores, k, opts.cca)?;
        // report energy weights over all four statistics, zero for dropped ones
        let energy_weights = c
            .x_weights
            .iter()
            .map(|w| {
                let mut full = vec![0.0; p];
                live.iter().zip(w).for_each(|(&j, &v)| full[j] = v);
                full
            })
            .collect();
        Ok(CcaSummary {
            correlations: c.correlations,
            energy_weights,
            audio_weights: c.y_weights,
            audio_components: q,
        })
    })());

    let pls = Outcome::from_result(pls_regression(&e, &f, opts.pls).map(|r| PlsSummary {
        components: r.components,
        folds: r.folds,
        r2: data.feature_names.iter().cloned().zip(r.r2).collect(),
    }));

    let rows: Vec<Vec<f64>> = data.rows.iter().map(|r| r.features.clone()).collect();
    let forest = data
        .energy_names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let fo = ForestOptions {
                n_trees: opts.forest_trees,
                seed: opts.seed.wrapping_add(i as u64),
                ..ForestOptions::default()
            };
            let outcome = Outcome::from_result(rf_importance(&rows, &data.energy_column(i), fo).map(|r| {
                let ranking = r.ranking().into_iter().map(|j| (data.feature_names[j].clone(), r.importances[j])).collect();
                ForestSummary {
                    oob_r2: r.oob_r2,
                    ranking,
                }
            }));
            ForestTarget {
                target: name.clone(),
                outcome,
            }
        })
        .collect();

    Ok(AnalysisReport {
        metadata: ReportMetadata {
            version: REPORT_VERSION,
            segments: n,
            dropped_segments: data.dropped,
            segment_s: SEGMENT_S,
            n_tests,
            library_hash: String::new(),
            weights_hash: String::new(),
            seed: opts.seed,
        },
        correlations,
        pca_energy,
        pca_audio,
        cca: cca_out,
        pls,
        forest,
    })
}
