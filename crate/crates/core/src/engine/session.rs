//! The session log: a JSON Lines file with one header line followed by one
//! event per engine step.
//!
//! ```text
//! {"type":"header","config":{...},"library_hash":"…","weights_hash":"…","sample_rate":22050,"render_offset_ms":3500.0,"mode":"offline"}
//! {"type":"step","step":0,"t_ms":3500.0,"window_start_ms":0.0,"energy":{...},"clip_id":"…",...}
//! ```

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EngineConfig;
use crate::error::{Error, Result};
use crate::pose::EnergyStats;
use crate::retrieval::Scored;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    Offline,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub config: EngineConfig,
    pub library_hash: String,
    pub weights_hash: String,
    pub sample_rate: u32,
    /// Session time (pose clock) of the first rendered sample.
    pub render_offset_ms: f64,
    pub mode: SessionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub step: u64,
    /// Decision time on the pose clock.
    pub t_ms: f64,
    pub window_start_ms: f64,
    pub energy: Option<EnergyStats>,
    /// Per-frame movement energies of the window.
    #[serde(default)]
    pub energies: Vec<f64>,
    pub clip_id: String,
    /// Cosine of the smoothed prediction with the chosen clip; absent on fallback.
    pub similarity: Option<f64>,
    #[serde(default)]
    pub top5: Vec<Scored>,
    pub latency_ms: f64,
    /// Clip whose latent conditioned this step; absent at bootstrap.
    pub prev_clip_id: Option<String>,
    /// Cosine distance between this and the previous raw prediction.
    pub raw_shift: Option<f64>,
    /// Same for the smoothed prediction.
    pub smoothed_shift: Option<f64>,
    pub crossfade_ms: f64,
    pub fault: Option<String>,
    #[serde(default)]
    pub underrun: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Header(SessionHeader),
    Step(StepEvent),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub header: SessionHeader,
    pub events: Vec<StepEvent>,
}

impl SessionLog {
    pub fn new(header: SessionHeader) -> Self {
        Self {
            header,
            events: Vec::new(),
        }
    }

    pub fn push(&mut self, event: StepEvent) -> Result<()> {
        if let Some(last) = self.events.last() {
            if event.step <= last.step {
                return Err(Error::invalid(format!(
                    "step {} after step {}: indices must increase",
                    event.step, last.step
                )));
            }
        }
        self.events.push(event);
        Ok(())
    }

    pub fn header_line(&self) -> String {
        serde_json::to_string(&LogLine::Header(self.header.clone())).expect("header serializes")
    }

    pub fn event_line(event: &StepEvent) -> String {
        serde_json::to_string(&LogLine::Step(event.clone())).expect("event serializes")
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = self.header_line();
        out.push('\n');
        for e in &self.events {
            out.push_str(&Self::event_line(e));
            out.push('\n');
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_jsonl().as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut header = None;
        let mut events = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<session log>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<LogLine>(&line)? {
                LogLine::Header(h) if header.is_none() && events.is_empty() => header = Some(h),
                LogLine::Header(_) => {
                    return Err(Error::invalid(format!("line {}: header must come first and once", i + 1)))
                }
                LogLine::Step(_) if header.is_none() => {
                    return Err(Error::invalid("session log has no header line"));
                }
                LogLine::Step(e) => events.push(e),
            }
        }
        let header = header.ok_or_else(|| Error::insufficient("empty session log"))?;
        let mut log = SessionLog::new(header);
        for e in events {
            log.push(e)?;
        }
        Ok(log)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(std::io::BufReader::new(f))
    }
}
