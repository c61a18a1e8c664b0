//! Per-segment (movement energy, audio feature) rows built from a session.

use kinetune_core::dsp::{extract_features, AudioClip, FEATURE_NAMES};
use kinetune_core::engine::SessionLog;
use kinetune_core::pose::{energy_stats, EnergyStats};
use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{AnalysisError, Result};

pub const SEGMENT_S: f64 = 10.0;
pub const MIN_SESSION_S: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRow {
    pub segment: usize,
    /// Session time (pose clock) where the segment starts.
    pub start_ms: f64,
    pub energy: Vec<f64>,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDataset {
    pub energy_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub rows: Vec<SegmentRow>,
    /// Segments dropped for lack of pose data or non-finite values.
    pub dropped: usize,
}

/// Movement energy samples on the session clock. Consecutive windows
/// overlap, so each window only contributes samples taken before the next
/// window begins.
fn energy_timeline(log: &SessionLog) -> Vec<(f64, f64)> {
    let dt = 1000.0 / log.header.config.fps;
    let mut out = Vec::new();
    for (k, ev) in log.events.iter().enumerate() {
        let next = log.events.get(k + 1).map_or(f64::INFINITY, |n| n.window_start_ms);
        for (i, &e) in ev.energies.iter().enumerate() {
            let t = ev.window_start_ms + (i + 1) as f64 * dt;
            if t < next && e.is_finite() {
                out.push((t, e));
            }
        }
    }
    out
}

impl SessionDataset {
    /// Cut the render into whole 10 s segments and pair each with the energy
    /// statistics of the pose data over the same span of session time.
    pub fn from_session(log: &SessionLog, audio: &[f32]) -> Result<Self> {
        let sr = log.header.sample_rate;
        let duration = audio.len() as f64 / sr as f64;
        if duration < MIN_SESSION_S {
            return Err(AnalysisError::InsufficientData(format!(
                "{duration:.1} s of audio, analysis needs {MIN_SESSION_S} s"
            )));
        }
        let seg_len = (SEGMENT_S * sr as f64) as usize;
        let segments = audio.len() / seg_len;
        let timeline = energy_timeline(log);
        let offset = log.header.render_offset_ms;

        let mut rows = Vec::with_capacity(segments);
        let mut dropped = 0;
        for s in 0..segments {
            let start_ms = offset + s as f64 * SEGMENT_S * 1000.0;
            let end_ms = start_ms + SEGMENT_S * 1000.0;
            let energies: Vec<f64> =
                timeline.iter().filter(|(t, _)| *t >= start_ms && *t < end_ms).map(|&(_, e)| e).collect();
            let Ok(stats) = energy_stats(&energies) else {
                dropped += 1;
                continue;
            };
            let clip = AudioClip::new(audio[s * seg_len..(s + 1) * seg_len].to_vec(), sr)?;
            let features = extract_features(&clip)?.values;
            let energy = stats.to_array().to_vec();
            if energy.iter().chain(&features).any(|v| !v.is_finite()) {
                dropped += 1;
                continue;
            }
            rows.push(SegmentRow {
                segment: s,
                start_ms,
                energy,
                features,
            });
        }
        if dropped > 0 {
            warn!("dropped {dropped} of {segments} segments");
        }
        Ok(Self {
            energy_names: EnergyStats::NAMES.iter().map(|s| s.to_string()).collect(),
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            rows,
            dropped,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn energy_column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.energy[j]).collect()
    }

    pub fn feature_column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.features[j]).collect()
    }

    pub fn energy_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.energy_names.len(), |i, j| self.rows[i].energy[j])
    }

    pub fn feature_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.feature_names.len(), |i, j| self.rows[i].features[j])
    }
}
