//! The performance loop: window → rasterize → encode → predict → smooth →
//! retrieve → crossfade, with a deterministic offline driver and a session log.

mod mixer;
mod session;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::warn;
use serde::{Deserialize, Serialize};

pub use mixer::{
    crossfade_gains, crossfade_samples, layout, mix_output, render_placed, render_schedule, MixerEvent,
    PlacedClip, QueuedClip, StreamingMixer,
};
pub use session::{LogLine, SessionHeader, SessionLog, SessionMode, StepEvent};

use crate::dsp::{CLIP_SECONDS, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::library::ClipLibrary;
use crate::neural::{trajectory_tensor, LatentVec, WeightBundle};
use crate::pose::{energy_stats, window_at, MovementWindow, PoseFrame, WindowConfig};
use crate::raster::rasterize;
use crate::retrieval::{cosine, LatentIndex, RetrievalPolicy, Retriever};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputMode {
    /// Raw little-endian f32 PCM to the process output stream.
    #[default]
    Device,
    /// Render to a 22050 Hz mono WAV file.
    Wav { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub clip_s: f64,
    pub crossfade_ms: f64,
    pub smoothing_tau_s: f64,
    pub fps: f64,
    pub seed: u64,
    pub library: PathBuf,
    pub weights: PathBuf,
    #[serde(default)]
    pub output: OutputMode,
    #[serde(default)]
    pub anti_repeat_window: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            clip_s: CLIP_SECONDS,
            crossfade_ms: 500.0,
            smoothing_tau_s: 7.0,
            fps: 30.0,
            seed: 0,
            library: PathBuf::from("library"),
            weights: PathBuf::from("weights.dmwb"),
            output: OutputMode::Device,
            anti_repeat_window: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        // windows and library clips share one length, so the cadence lines up
        if (self.clip_s - CLIP_SECONDS).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "clip_s must equal the library clip length {CLIP_SECONDS} s, got {}",
                self.clip_s
            )));
        }
        if !(self.crossfade_ms > 0.0 && self.crossfade_ms < self.clip_s * 1000.0) {
            return Err(Error::invalid(format!(
                "crossfade_ms must lie in (0, {}), got {}",
                self.clip_s * 1000.0,
                self.crossfade_ms
            )));
        }
        if !(self.smoothing_tau_s >= 0.0 && self.smoothing_tau_s.is_finite()) {
            return Err(Error::invalid(format!(
                "smoothing_tau_s must be a non-negative number, got {}",
                self.smoothing_tau_s
            )));
        }
        if !(self.fps > 0.0 && self.fps <= 1000.0) {
            return Err(Error::invalid(format!("fps must lie in (0, 1000], got {}", self.fps)));
        }
        Ok(())
    }

    /// Time between consecutive clip starts.
    pub fn cadence_ms(&self) -> f64 {
        self.clip_s * 1000.0 - self.crossfade_ms
    }

    pub fn smoothing_alpha(&self) -> f64 {
        smoothing_alpha(self.clip_s, self.smoothing_tau_s)
    }

    pub fn window(&self) -> WindowConfig {
        WindowConfig {
            duration_s: self.clip_s,
            hop_s: self.cadence_ms() / 1000.0,
            fps: self.fps,
        }
    }

    pub fn crossfade_samples(&self) -> usize {
        crossfade_samples(self.crossfade_ms, SAMPLE_RATE)
    }
}

/// `1 − exp(−clip_s / tau)`; a zero tau disables smoothing.
pub fn smoothing_alpha(clip_s: f64, tau_s: f64) -> f64 {
    if tau_s <= 0.0 {
        1.0
    } else {
        1.0 - (-clip_s / tau_s).exp()
    }
}

/// `prev·(1 − alpha) + new·alpha`.
pub fn ema_smooth(prev: &LatentVec, new: &LatentVec, alpha: f64) -> LatentVec {
    let alpha = alpha.clamp(0.0, 1.0);
    let v = prev
        .as_slice()
        .iter()
        .zip(new.as_slice())
        .map(|(&p, &n)| (p as f64 * (1.0 - alpha) + n as f64 * alpha) as f32)
        .collect();
    LatentVec::new(v).expect("convex combination of finite latents")
}

fn cosine_distance(a: &LatentVec, b: &LatentVec) -> Option<f64> {
    cosine(a, b).ok().map(|c| 1.0 - c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineState {
    pub prev_audio_latent: LatentVec,
    pub smoothed_pred: Option<LatentVec>,
    pub last_raw: Option<LatentVec>,
    pub current_clip: Option<String>,
    pub step: u64,
}

impl Default for EngineState {
    fn default() -> Self {
        Self {
            prev_audio_latent: LatentVec::zeros(),
            smoothed_pred: None,
            last_raw: None,
            current_clip: None,
            step: 0,
        }
    }
}

/// Decision-side engine: owns the state, never touches audio.
#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    bundle: Arc<WeightBundle>,
    library: Arc<ClipLibrary>,
    retriever: Retriever,
    state: EngineState,
}

struct Decision {
    clip_id: String,
    similarity: f64,
    top5: Vec<crate::retrieval::Scored>,
    raw: LatentVec,
    smoothed: LatentVec,
}

impl Engine {
    pub fn new(config: EngineConfig, bundle: Arc<WeightBundle>, library: Arc<ClipLibrary>) -> Result<Self> {
        config.validate()?;
        if library.is_empty() {
            return Err(Error::EmptyLibrary);
        }
        bundle.validate()?;
        if library.weights_hash() != bundle.content_hash() {
            warn!("library latents were computed with different weights");
        }
        let policy = RetrievalPolicy {
            anti_repeat_window: config.anti_repeat_window,
        };
        let retriever = Retriever::new(LatentIndex::new(library.clips())?, policy)?;
        Ok(Self {
            config,
            bundle,
            library,
            retriever,
            state: EngineState::default(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn library(&self) -> &Arc<ClipLibrary> {
        &self.library
    }

    pub fn bundle(&self) -> &Arc<WeightBundle> {
        &self.bundle
    }

    /// Change crossfade / smoothing mid-session; other fields are fixed.
    pub fn update_tuning(&mut self, crossfade_ms: f64, smoothing_tau_s: f64) -> Result<()> {
        let mut next = self.config.clone();
        next.crossfade_ms = crossfade_ms;
        next.smoothing_tau_s = smoothing_tau_s;
        next.validate()?;
        self.config = next;
        Ok(())
    }

    /// Switch to an edited library mid-session. State carries over; a
    /// current clip that was removed keeps playing until the next decision.
    pub fn set_library(&mut self, library: Arc<ClipLibrary>) -> Result<()> {
        if library.is_empty() {
            return Err(Error::EmptyLibrary);
        }
        self.retriever.replace_index(LatentIndex::new(library.clips())?)?;
        self.library = library;
        Ok(())
    }

    /// Movement latent of a window (posterior mean).
    pub fn encode_window(&self, window: &MovementWindow) -> Result<LatentVec> {
        let image = rasterize(window)?;
        Ok(self.bundle.movement_encoder().encode(&trajectory_tensor(&image))?.0)
    }

    fn decide(&self, window: &MovementWindow) -> Result<Decision> {
        let z_move = self.encode_window(window)?;
        let raw = self.bundle.generator().forward(&z_move, &self.state.prev_audio_latent)?;
        let smoothed = match &self.state.smoothed_pred {
            Some(prev) => ema_smooth(prev, &raw, self.config.smoothing_alpha()),
            None => raw.clone(),
        };
        let hit = self.retriever.choose(&smoothed)?;
        let top5 = self.retriever.index().top_k(&smoothed, 5)?;
        Ok(Decision {
            clip_id: hit.id,
            similarity: hit.score,
            top5,
            raw,
            smoothed,
        })
    }

    /// One decision. Never fails: errors and deadline misses repeat the
    /// current clip (or the first library clip before anything has played).
    pub fn step(
        &mut self,
        window: Result<MovementWindow>,
        t_ms: f64,
        window_start_ms: f64,
        deadline: Option<Duration>,
    ) -> StepEvent {
        let started = Instant::now();
        let energies = window.as_ref().map(|w| w.energies()).unwrap_or_default();
        let energy = energy_stats(&energies).ok();
        let prev_clip_id = self.state.current_clip.clone();
        let outcome = window.and_then(|w| self.decide(&w));
        let elapsed = started.elapsed();
        let underrun = deadline.is_some_and(|d| elapsed > d);

        let mut event = StepEvent {
            step: self.state.step,
            t_ms,
            window_start_ms,
            energy,
            energies,
            clip_id: String::new(),
            similarity: None,
            top5: Vec::new(),
            latency_ms: if deadline.is_some() { elapsed.as_secs_f64() * 1000.0 } else { 0.0 },
            prev_clip_id,
            raw_shift: None,
            smoothed_shift: None,
            crossfade_ms: self.config.crossfade_ms,
            fault: None,
            underrun,
        };

        match outcome {
            Ok(d) if !underrun => {
                event.raw_shift = self.state.last_raw.as_ref().and_then(|p| cosine_distance(p, &d.raw));
                event.smoothed_shift = self
                    .state
                    .smoothed_pred
                    .as_ref()
                    .and_then(|p| cosine_distance(p, &d.smoothed));
                self.retriever.record(&d.clip_id);
                self.state.prev_audio_latent = self.library.get(&d.clip_id).expect("indexed clip").latent.clone();
                self.state.current_clip = Some(d.clip_id.clone());
                self.state.last_raw = Some(d.raw);
                self.state.smoothed_pred = Some(d.smoothed);
                event.clip_id = d.clip_id;
                event.similarity = Some(d.similarity);
                event.top5 = d.top5;
            }
            other => {
                let fault = match other {
                    Err(e) => e.to_string(),
                    Ok(_) => format!("step took {:.1} ms, past the deadline", elapsed.as_secs_f64() * 1000.0),
                };
                warn!("step {}: {fault}; repeating current clip", self.state.step);
                let id = self
                    .state
                    .current_clip
                    .clone()
                    .filter(|id| self.library.get(id).is_some())
                    .unwrap_or_else(|| self.library.clips()[0].id.clone());
                self.retriever.record(&id);
                self.state.prev_audio_latent = self.library.get(&id).expect("library clip").latent.clone();
                self.state.current_clip = Some(id.clone());
                event.clip_id = id;
                event.fault = Some(fault);
            }
        }
        self.state.step += 1;
        event
    }
}

/// One offline schedule entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledClip {
    pub step: u64,
    pub clip_id: String,
    /// Start in the rendered output, in samples.
    pub start_sample: usize,
}

#[derive(Debug, Clone)]
pub struct OfflineRun {
    pub log: SessionLog,
    pub schedule: Vec<ScheduledClip>,
    pub audio: Vec<f32>,
}

/// Drive the engine over a recorded pose stream on a simulated clock.
///
/// Windows start at the first frame and advance by the clip cadence; each
/// decision happens when its window closes, and the render begins at the
/// first decision.
pub fn run_offline(
    stream: &[PoseFrame],
    config: &EngineConfig,
    bundle: Arc<WeightBundle>,
    library: Arc<ClipLibrary>,
) -> Result<OfflineRun> {
    let (Some(first), Some(last)) = (stream.first(), stream.last()) else {
        return Err(Error::insufficient("pose replay is empty"));
    };
    let mut engine = Engine::new(config.clone(), bundle.clone(), library.clone())?;
    let wcfg = config.window();
    let t0 = first.timestamp_ms as f64;
    let span = last.timestamp_ms as f64 - t0;
    if span + 0.5 < wcfg.span_ms() {
        return Err(Error::insufficient(format!(
            "pose replay spans {span} ms, one window needs {:.1} ms",
            wcfg.span_ms()
        )));
    }
    let cadence = config.cadence_ms();
    let steps = ((span + 0.5 - wcfg.span_ms()) / cadence).floor() as usize + 1;
    let render_offset_ms = t0 + config.clip_s * 1000.0;

    let mut log = SessionLog::new(SessionHeader {
        config: config.clone(),
        library_hash: library.content_hash(),
        weights_hash: bundle.content_hash(),
        sample_rate: SAMPLE_RATE,
        render_offset_ms,
        mode: SessionMode::Offline,
    });
    let mut audio_cache: std::collections::HashMap<String, Arc<[f32]>> = Default::default();
    let mut queue = Vec::with_capacity(steps);
    for k in 0..steps {
        let start = t0 + k as f64 * cadence;
        let event = engine.step(
            window_at(stream, start, &wcfg),
            start + config.clip_s * 1000.0,
            start,
            None,
        );
        let samples = match audio_cache.get(&event.clip_id) {
            Some(s) => s.clone(),
            None => {
                let entry = library.get(&event.clip_id).expect("scheduled clip is in the library");
                let s: Arc<[f32]> = library.load_audio(entry)?.into_samples().into();
                audio_cache.insert(event.clip_id.clone(), s.clone());
                s
            }
        };
        queue.push(QueuedClip::new(event.clip_id.clone(), samples, config.crossfade_samples()));
        log.push(event)?;
    }
    let placed = layout(&queue)?;
    let audio = render_placed(&placed);
    let schedule = placed
        .iter()
        .zip(&log.events)
        .map(|(p, e)| ScheduledClip {
            step: e.step,
            clip_id: p.clip.id.clone(),
            start_sample: p.start,
        })
        .collect();
    Ok(OfflineRun { log, schedule, audio })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_from_tau() {
        assert_eq!(smoothing_alpha(3.5, 0.0), 1.0);
        assert!((smoothing_alpha(3.5, 7.0) - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn ema_endpoints() {
        let a = LatentVec::new((0..128).map(|i| i as f32).collect()).unwrap();
        let b = LatentVec::new((0..128).map(|i| -(i as f32)).collect()).unwrap();
        assert_eq!(ema_smooth(&a, &b, 1.0), b);
        assert_eq!(ema_smooth(&a, &b, 0.0), a);
    }

    #[test]
    fn ema_converges_geometrically() {
        let v = LatentVec::new(vec![1.0; 128]).unwrap();
        let mut s = LatentVec::new(vec![-3.0; 128]).unwrap();
        let alpha = smoothing_alpha(3.5, 7.0);
        for _ in 0..10 {
            s = ema_smooth(&s, &v, alpha);
        }
        // |s - v| = |s0 - v| (1 - alpha)^10 = 4 e^-5 ≈ 0.027
        let err = (s.as_slice()[0] - 1.0).abs() as f64;
        assert!((err - 4.0 * (1.0 - alpha).powi(10)).abs() < 1e-5);
        assert!(err < 0.01 * 4.0);
    }

    #[test]
    fn config_limits() {
        let ok = EngineConfig::default();
        ok.validate().unwrap();
        assert_eq!(ok.cadence_ms(), 3000.0);
        for bad in [
            EngineConfig { crossfade_ms: 0.0, ..ok.clone() },
            EngineConfig { crossfade_ms: 3500.0, ..ok.clone() },
            EngineConfig { smoothing_tau_s: -1.0, ..ok.clone() },
            EngineConfig { clip_s: 2.0, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
