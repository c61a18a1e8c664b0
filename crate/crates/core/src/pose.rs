//! Landmark streams: normalization, windowing and movement energy.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LANDMARK_COUNT: usize = 5;

/// Tracked body landmarks, in drawing and serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LandmarkId {
    Head,
    LeftWrist,
    RightWrist,
    LeftAnkle,
    RightAnkle,
}

impl LandmarkId {
    pub const ALL: [LandmarkId; LANDMARK_COUNT] = [
        LandmarkId::Head,
        LandmarkId::LeftWrist,
        LandmarkId::RightWrist,
        LandmarkId::LeftAnkle,
        LandmarkId::RightAnkle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Points below this confidence are replaced by the previous frame's point.
pub const MIN_CONFIDENCE: f64 = 0.3;
/// Gaps shorter than this are interpolated; longer gaps hold the last value.
pub const INTERPOLATION_GAP_MS: f64 = 200.0;

fn full_confidence() -> [f64; LANDMARK_COUNT] {
    [1.0; LANDMARK_COUNT]
}

/// One pose-estimator sample. Serialized as `{"t": ms, "pts": [[x,y];5], "conf": [c;5]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    #[serde(rename = "t")]
    pub timestamp_ms: i64,
    #[serde(rename = "pts")]
    pub points: [[f64; 2]; LANDMARK_COUNT],
    #[serde(rename = "conf", default = "full_confidence")]
    pub confidence: [f64; LANDMARK_COUNT],
}

impl PoseFrame {
    pub fn new(timestamp_ms: i64, points: [[f64; 2]; LANDMARK_COUNT]) -> Self {
        Self {
            timestamp_ms,
            points,
            confidence: full_confidence(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!(
                    "frame t={}: landmark {i} coordinate {p:?} outside [-1, 1]",
                    self.timestamp_ms
                )));
            }
        }
        if !self
            .confidence
            .iter()
            .all(|c| c.is_finite() && (0.0..=1.0).contains(c))
        {
            return Err(Error::invalid(format!(
                "frame t={}: confidence outside [0, 1]",
                self.timestamp_ms
            )));
        }
        Ok(())
    }

    pub fn point(&self, id: LandmarkId) -> [f64; 2] {
        self.points[id.index()]
    }
}

/// Map pixel coordinates to the normalized [-1, 1] camera frame.
pub fn normalize_point(px: f64, py: f64, frame_w: f64, frame_h: f64) -> Result<(f64, f64)> {
    if !(frame_w > 0.0 && frame_h > 0.0) {
        return Err(Error::invalid(format!(
            "frame dimensions must be positive, got {frame_w}x{frame_h}"
        )));
    }
    let x = (2.0 * px / frame_w - 1.0).clamp(-1.0, 1.0);
    let y = (2.0 * py / frame_h - 1.0).clamp(-1.0, 1.0);
    Ok((x, y))
}

/// Inverse of [`normalize_point`] for in-bounds points.
pub fn denormalize_point(x: f64, y: f64, frame_w: f64, frame_h: f64) -> (f64, f64) {
    ((x + 1.0) * 0.5 * frame_w, (y + 1.0) * 0.5 * frame_h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub duration_s: f64,
    pub hop_s: f64,
    pub fps: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            duration_s: 3.5,
            hop_s: 3.5,
            fps: 30.0,
        }
    }
}

impl WindowConfig {
    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }

    pub fn frame_interval_ms(&self) -> f64 {
        1000.0 / self.fps
    }

    /// Stream time covered from the first to the last resampled instant.
    pub fn span_ms(&self) -> f64 {
        (self.frame_count().saturating_sub(1)) as f64 * self.frame_interval_ms()
    }

    fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.hop_s > 0.0 && self.fps > 0.0 && self.fps <= 1000.0) {
            return Err(Error::invalid(format!("bad window config {self:?}")));
        }
        if self.frame_count() < 2 {
            return Err(Error::invalid("window must hold at least two frames"));
        }
        Ok(())
    }
}

/// A fixed-duration run of frames resampled onto a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementWindow {
    frames: Vec<PoseFrame>,
    nominal_duration_s: f64,
    nominal_fps: f64,
}

impl MovementWindow {
    pub fn new(frames: Vec<PoseFrame>, nominal_duration_s: f64, nominal_fps: f64) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::invalid("movement window needs at least two frames"));
        }
        if frames
            .windows(2)
            .any(|w| w[1].timestamp_ms <= w[0].timestamp_ms)
        {
            return Err(Error::invalid("window timestamps must be strictly increasing"));
        }
        for f in &frames {
            f.validate()?;
        }
        let span = (frames[frames.len() - 1].timestamp_ms - frames[0].timestamp_ms) as f64;
        let nominal = nominal_duration_s * 1000.0;
        if (span - nominal).abs() > 0.1 * nominal {
            return Err(Error::invalid(format!(
                "window spans {span} ms, expected {nominal} ms ±10%"
            )));
        }
        Ok(Self {
            frames,
            nominal_duration_s,
            nominal_fps,
        })
    }

    pub fn frames(&self) -> &[PoseFrame] {
        &self.frames
    }

    pub fn nominal_duration_s(&self) -> f64 {
        self.nominal_duration_s
    }

    pub fn nominal_fps(&self) -> f64 {
        self.nominal_fps
    }

    pub fn start_ms(&self) -> i64 {
        self.frames[0].timestamp_ms
    }

    pub fn end_ms(&self) -> i64 {
        self.frames[self.frames.len() - 1].timestamp_ms
    }

    /// Per-step energies, one per consecutive frame pair.
    pub fn energies(&self) -> Vec<f64> {
        self.frames
            .windows(2)
            .map(|w| frame_energy(&w[0], &w[1]))
            .collect()
    }

    /// Per-landmark displacement series, indexed by [`LandmarkId::index`].
    pub fn landmark_energies(&self) -> [Vec<f64>; LANDMARK_COUNT] {
        std::array::from_fn(|l| {
            self.frames
                .windows(2)
                .map(|w| distance(w[0].points[l], w[1].points[l]))
                .collect()
        })
    }
}

/// Replace low-confidence points with the preceding frame's point.
pub fn suppress_low_confidence(stream: &[PoseFrame]) -> Vec<PoseFrame> {
    let mut out: Vec<PoseFrame> = Vec::with_capacity(stream.len());
    for frame in stream {
        let mut f = frame.clone();
        if let Some(prev) = out.last() {
            for l in 0..LANDMARK_COUNT {
                if f.confidence[l] < MIN_CONFIDENCE {
                    f.points[l] = prev.points[l];
                }
            }
        }
        out.push(f);
    }
    out
}

fn check_increasing(stream: &[PoseFrame]) -> Result<()> {
    if let Some(w) = stream
        .windows(2)
        .find(|w| w[1].timestamp_ms <= w[0].timestamp_ms)
    {
        return Err(Error::invalid(format!(
            "timestamps not increasing: {} then {}",
            w[0].timestamp_ms, w[1].timestamp_ms
        )));
    }
    Ok(())
}

fn sample_at(stream: &[PoseFrame], t: f64) -> PoseFrame {
    // index of the last frame with timestamp <= t
    let idx = stream
        .partition_point(|f| (f.timestamp_ms as f64) <= t)
        .saturating_sub(1);
    let a = &stream[idx];
    let stamp = t.round() as i64;
    let hold = PoseFrame {
        timestamp_ms: stamp,
        ..a.clone()
    };
    let Some(b) = stream.get(idx + 1) else {
        return hold;
    };
    let (ta, tb) = (a.timestamp_ms as f64, b.timestamp_ms as f64);
    if t <= ta || tb - ta >= INTERPOLATION_GAP_MS {
        return hold;
    }
    let w = (t - ta) / (tb - ta);
    let lerp = |p: f64, q: f64| p + (q - p) * w;
    PoseFrame {
        timestamp_ms: stamp,
        points: std::array::from_fn(|l| {
            [
                lerp(a.points[l][0], b.points[l][0]),
                lerp(a.points[l][1], b.points[l][1]),
            ]
        }),
        confidence: std::array::from_fn(|l| lerp(a.confidence[l], b.confidence[l])),
    }
}

/// Resample the window starting at `start_ms` onto the nominal frame grid.
pub fn window_at(stream: &[PoseFrame], start_ms: f64, cfg: &WindowConfig) -> Result<MovementWindow> {
    cfg.validate()?;
    check_increasing(stream)?;
    let (Some(first), Some(last)) = (stream.first(), stream.last()) else {
        return Err(Error::insufficient("empty pose stream"));
    };
    let end = start_ms + cfg.span_ms();
    if start_ms < first.timestamp_ms as f64 || end > last.timestamp_ms as f64 + 0.5 {
        return Err(Error::insufficient(format!(
            "stream covers {}..{} ms, window needs {start_ms:.1}..{end:.1} ms",
            first.timestamp_ms, last.timestamp_ms
        )));
    }
    let cleaned = suppress_low_confidence(stream);
    let dt = cfg.frame_interval_ms();
    let frames = (0..cfg.frame_count())
        .map(|i| sample_at(&cleaned, start_ms + i as f64 * dt))
        .collect();
    MovementWindow::new(frames, cfg.duration_s, cfg.fps)
}

/// Slice a stream into consecutive windows advancing by `hop_s`.
pub fn collect_windows(stream: &[PoseFrame], cfg: &WindowConfig) -> Result<Vec<MovementWindow>> {
    cfg.validate()?;
    check_increasing(stream)?;
    let (Some(first), Some(last)) = (stream.first(), stream.last()) else {
        return Err(Error::insufficient("empty pose stream"));
    };
    let span = (last.timestamp_ms - first.timestamp_ms) as f64;
    if span + 0.5 < cfg.span_ms() {
        return Err(Error::insufficient(format!(
            "stream spans {span} ms, a {} s window needs {:.1} ms",
            cfg.duration_s,
            cfg.span_ms()
        )));
    }
    let hop = cfg.hop_s * 1000.0;
    let t0 = first.timestamp_ms as f64;
    let count = ((span + 0.5 - cfg.span_ms()) / hop).floor() as usize + 1;
    (0..count)
        .map(|k| window_at(stream, t0 + k as f64 * hop, cfg))
        .collect()
}

/// Mean Euclidean displacement of the five landmarks between two frames.
pub fn frame_energy(prev: &PoseFrame, cur: &PoseFrame) -> f64 {
    let total: f64 = (0..LANDMARK_COUNT)
        .map(|l| distance(prev.points[l], cur.points[l]))
        .sum();
    total / LANDMARK_COUNT as f64
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyStats {
    pub mean_energy: f64,
    pub min_energy: f64,
    pub max_energy: f64,
    pub std_energy: f64,
}

impl EnergyStats {
    pub const NAMES: [&'static str; 4] = ["mean_energy", "min_energy", "max_energy", "std_energy"];

    pub fn to_array(&self) -> [f64; 4] {
        [
            self.mean_energy,
            self.min_energy,
            self.max_energy,
            self.std_energy,
        ]
    }
}

/// Descriptive statistics with population standard deviation.
pub fn energy_stats(energies: &[f64]) -> Result<EnergyStats> {
    if energies.is_empty() {
        return Err(Error::insufficient("no energy samples"));
    }
    let n = energies.len() as f64;
    let mean = energies.iter().sum::<f64>() / n;
    let var = energies.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    let min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(EnergyStats {
        // rounding can push the mean a hair outside [min, max]
        mean_energy: mean.clamp(min, max),
        min_energy: min,
        max_energy: max,
        std_energy: var.sqrt(),
    })
}

/// Parse a JSON Lines replay, one [`PoseFrame`] per non-blank line.
pub fn parse_replay(text: &str) -> Result<Vec<PoseFrame>> {
    let mut frames = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let frame: PoseFrame = serde_json::from_str(line).map_err(|e| {
            Error::invalid(format!("pose replay line {}: {e}", lineno + 1))
        })?;
        frame.validate()?;
        frames.push(frame);
    }
    check_increasing(&frames)?;
    Ok(frames)
}

pub fn read_replay(path: &Path) -> Result<Vec<PoseFrame>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_replay(&text)
}

pub fn write_replay(frames: &[PoseFrame]) -> String {
    let mut out = String::new();
    for f in frames {
        out.push_str(&serde_json::to_string(f).expect("pose frames serialize"));
        out.push('\n');
    }
    out
}

/// Ingestion buffer for a live stream: one writer pushes, the engine reads
/// the most recent complete window.
#[derive(Debug, Clone)]
pub struct FrameBuffer {
    frames: VecDeque<PoseFrame>,
    retain_ms: i64,
}

impl FrameBuffer {
    pub fn new(retain_ms: i64) -> Self {
        Self {
            frames: VecDeque::new(),
            retain_ms,
        }
    }

    pub fn push(&mut self, frame: PoseFrame) -> Result<()> {
        frame.validate()?;
        if let Some(last) = self.frames.back() {
            if frame.timestamp_ms <= last.timestamp_ms {
                return Err(Error::invalid(format!(
                    "out-of-order frame {} after {}",
                    frame.timestamp_ms, last.timestamp_ms
                )));
            }
        }
        let horizon = frame.timestamp_ms - self.retain_ms;
        self.frames.push_back(frame);
        while self
            .frames
            .front()
            .is_some_and(|f| f.timestamp_ms < horizon)
        {
            self.frames.pop_front();
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn latest_timestamp(&self) -> Option<i64> {
        self.frames.back().map(|f| f.timestamp_ms)
    }

    /// The window ending at the newest frame.
    pub fn latest_window(&self, cfg: &WindowConfig) -> Result<MovementWindow> {
        let last = self
            .latest_timestamp()
            .ok_or_else(|| Error::insufficient("no frames buffered"))?;
        self.window_at(last as f64 - cfg.span_ms(), cfg)
    }

    /// The window starting at `start_ms`, if the buffer still covers it.
    pub fn window_at(&self, start_ms: f64, cfg: &WindowConfig) -> Result<MovementWindow> {
        let frames: Vec<PoseFrame> = self.frames.iter().cloned().collect();
        window_at(&frames, start_ms, cfg)
    }
}
