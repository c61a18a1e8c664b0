//! A live session: pose frames in, clips scheduled, audio out.
//!
//! Two threads. The decision thread owns the [`Engine`] and consumes a
//! single command queue (frames, tuning, library edits, stop). The audio
//! thread owns the [`StreamingMixer`] and the output sink; the only thing
//! the two share is the schedule channel between them.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use kinetune_core::dsp::{write_wav, SAMPLE_RATE};
use kinetune_core::engine::{
    Engine, EngineConfig, MixerEvent, OutputMode, QueuedClip, SessionHeader, SessionLog, SessionMode, StreamingMixer,
};
use kinetune_core::library::ClipLibrary;
use kinetune_core::neural::WeightBundle;
use kinetune_core::pose::{FrameBuffer, PoseFrame};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServerError};
use crate::telemetry::{Telemetry, TelemetryEvent};

pub enum EngineCommand {
    Frame(PoseFrame),
    Tune { crossfade_ms: f64, smoothing_tau_s: f64 },
    Library(Arc<ClipLibrary>),
    Stop,
}

enum AudioCommand {
    Clip(QueuedClip),
    RepeatFade(usize),
    Close,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiveOptions {
    /// Wall-clock speed-up for audio pacing and step deadlines; 1 is real time.
    pub time_scale: f64,
}

impl Default for LiveOptions {
    fn default() -> Self {
        Self { time_scale: 1.0 }
    }
}

/// Counters readable while the session runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LiveProgress {
    pub steps: u64,
    pub current_clip: Option<String>,
    pub faults: u64,
    pub rejected_frames: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopSummary {
    pub steps: usize,
    pub faults: usize,
    /// Transitions where the mixer had nothing queued and repeated a clip.
    pub audio_underruns: usize,
    pub samples: usize,
    pub log: Option<PathBuf>,
    pub render: Option<PathBuf>,
}

struct AudioOutcome {
    samples: usize,
    underruns: usize,
    render: Option<PathBuf>,
}

pub struct LiveSession {
    commands: Sender<EngineCommand>,
    progress: Arc<Mutex<LiveProgress>>,
    engine_thread: Option<JoinHandle<SessionLog>>,
    audio_thread: Option<JoinHandle<Result<AudioOutcome>>>,
    log_path: Option<PathBuf>,
}

enum Sink {
    Device(std::io::BufWriter<std::io::Stdout>),
    Wav { path: PathBuf, samples: Vec<f32> },
}

impl Sink {
    fn write(&mut self, block: &[f32]) -> Result<()> {
        match self {
            Sink::Device(out) => {
                for s in block {
                    out.write_all(&s.to_le_bytes())
                        .map_err(|e| ServerError::io("<stdout>", e))?;
                }
                Ok(())
            }
            Sink::Wav { samples, .. } => {
                samples.extend_from_slice(block);
                Ok(())
            }
        }
    }

    fn finish(self, audible_end: usize) -> Result<Option<PathBuf>> {
        match self {
            Sink::Device(mut out) => {
                out.flush().map_err(|e| ServerError::io("<stdout>", e))?;
                Ok(None)
            }
            Sink::Wav { path, mut samples } => {
                samples.truncate(audible_end);
                write_wav(&path, &samples, SAMPLE_RATE)?;
                Ok(Some(path))
            }
        }
    }
}

const BLOCK: usize = 1024;

fn audio_loop(rx: Receiver<AudioCommand>, mut sink: Sink, repeat_fade: usize, time_scale: f64) -> Result<AudioOutcome> {
    let mut mixer = StreamingMixer::new(repeat_fade);
    // nothing is rendered before the first decision
    loop {
        match rx.recv() {
            Ok(AudioCommand::Clip(c)) => {
                mixer.push(c);
                break;
            }
            Ok(AudioCommand::RepeatFade(s)) => mixer.set_repeat_fade(s),
            Ok(AudioCommand::Close) | Err(_) => {
                return Ok(AudioOutcome {
                    samples: 0,
                    underruns: 0,
                    render: sink.finish(0)?,
                })
            }
        }
    }
    let rate = SAMPLE_RATE as f64 * time_scale;
    let started = Instant::now();
    let mut block = vec![0f32; BLOCK];
    loop {
        loop {
            match rx.try_recv() {
                Ok(AudioCommand::Clip(c)) => mixer.push(c),
                Ok(AudioCommand::RepeatFade(s)) => mixer.set_repeat_fade(s),
                Ok(AudioCommand::Close) => mixer.close(),
                Err(mpsc::TryRecvError::Disconnected) => {
                    mixer.close();
                    break;
                }
                Err(mpsc::TryRecvError::Empty) => break,
            }
        }
        if mixer.is_drained() {
            break;
        }
        // pace against the wall clock, except when flushing the tail at stop
        if !mixer.is_closed() {
            let ahead = mixer.position() as f64 - started.elapsed().as_secs_f64() * rate;
            if ahead > BLOCK as f64 {
                let wait = Duration::from_secs_f64(((ahead - BLOCK as f64) / rate).max(0.001));
                // wake early if a command arrives
                match rx.recv_timeout(wait.min(Duration::from_millis(20))) {
                    Ok(AudioCommand::Clip(c)) => mixer.push(c),
                    Ok(AudioCommand::RepeatFade(s)) => mixer.set_repeat_fade(s),
                    Ok(AudioCommand::Close) | Err(RecvTimeoutError::Disconnected) => mixer.close(),
                    Err(RecvTimeoutError::Timeout) => {}
                }
                continue;
            }
        }
        for ev in mixer.fill(&mut block) {
            let MixerEvent::Started { id, start, underrun } = ev;
            if underrun {
                warn!("no clip queued at sample {start}; repeating {id}");
            }
        }
        sink.write(&block)?;
    }
    let end = mixer.audible_end();
    Ok(AudioOutcome {
        samples: end,
        underruns: mixer.underruns(),
        render: sink.finish(end)?,
    })
}

struct DecisionLoop {
    engine: Engine,
    buffer: FrameBuffer,
    next_start: Option<f64>,
    audio: Sender<AudioCommand>,
    telemetry: Telemetry,
    progress: Arc<Mutex<LiveProgress>>,
    cache: HashMap<String, Arc<[f32]>>,
    log: SessionLog,
    time_scale: f64,
}

impl DecisionLoop {
    fn clip_samples(&mut self, id: &str) -> Option<Arc<[f32]>> {
        if let Some(s) = self.cache.get(id) {
            return Some(s.clone());
        }
        let lib = self.engine.library().clone();
        let entry = lib.get(id)?;
        match lib.load_audio(entry) {
            Ok(a) => {
                let s: Arc<[f32]> = a.into_samples().into();
                self.cache.insert(id.to_string(), s.clone());
                Some(s)
            }
            Err(e) => {
                warn!("cannot load audio for {id}: {e}");
                None
            }
        }
    }

    fn on_frame(&mut self, frame: PoseFrame) {
        let ts = frame.timestamp_ms as f64;
        if let Err(e) = self.buffer.push(frame) {
            warn!("rejected pose frame: {e}");
            self.progress.lock().expect("progress lock").rejected_frames += 1;
            return;
        }
        let mut start = *self.next_start.get_or_insert(ts);
        let span = self.engine.config().window().span_ms();
        let cadence = self.engine.config().cadence_ms();
        // after a long stall, skip to the newest complete window instead of
        // replaying every missed decision
        let behind = ((ts + 0.5 - span - start) / cadence).floor();
        if behind >= 2.0 {
            warn!("pose clock jumped {:.0} ms; skipping {behind} windows", ts - start);
            start += behind * cadence;
            self.next_start = Some(start);
        }
        while ts + 0.5 >= start + span {
            self.decide(start);
            start = self.next_start.expect("set by decide");
        }
    }

    fn decide(&mut self, start: f64) {
        let cfg = self.engine.config().clone();
        let deadline = Duration::from_secs_f64(cfg.cadence_ms() / 1000.0 / self.time_scale);
        let window = self.buffer.window_at(start, &cfg.window());
        // stamped like the offline runner: one clip length after the window opens
        let event = self.engine.step(window, start + cfg.clip_s * 1000.0, start, Some(deadline));
        self.next_start = Some(start + cfg.cadence_ms());

        let fade = cfg.crossfade_samples();
        match self.clip_samples(&event.clip_id) {
            Some(samples) => {
                let _ = self.audio.send(AudioCommand::Clip(QueuedClip::new(event.clip_id.clone(), samples, fade)));
            }
            // the mixer repeats what it has; audio never stops
            None => warn!("step {} scheduled nothing", event.step),
        }
        {
            let mut p = self.progress.lock().expect("progress lock");
            p.steps += 1;
            p.current_clip = Some(event.clip_id.clone());
            p.faults += event.fault.is_some() as u64;
        }
        self.telemetry.publish(TelemetryEvent::from_step(&event, fade));
        if let Err(e) = self.log.push(event) {
            warn!("session log: {e}");
        }
    }

    fn run(mut self, rx: Receiver<EngineCommand>) -> SessionLog {
        while let Ok(cmd) = rx.recv() {
            match cmd {
                EngineCommand::Frame(f) => self.on_frame(f),
                EngineCommand::Tune {
                    crossfade_ms,
                    smoothing_tau_s,
                } => match self.engine.update_tuning(crossfade_ms, smoothing_tau_s) {
                    Ok(()) => {
                        let _ = self.audio.send(AudioCommand::RepeatFade(self.engine.config().crossfade_samples()));
                    }
                    Err(e) => warn!("tuning rejected: {e}"),
                },
                EngineCommand::Library(lib) => match self.engine.set_library(lib) {
                    Ok(()) => self.cache.clear(),
                    Err(e) => warn!("library update rejected: {e}"),
                },
                EngineCommand::Stop => break,
            }
        }
        let _ = self.audio.send(AudioCommand::Close);
        self.log
    }
}

impl LiveSession {
    /// Validate and start both threads. `session_dir` receives the session
    /// log when the session stops.
    pub fn start(
        config: EngineConfig,
        bundle: Arc<WeightBundle>,
        library: Arc<ClipLibrary>,
        telemetry: Telemetry,
        opts: LiveOptions,
        session_dir: Option<PathBuf>,
    ) -> Result<Self> {
        if !(opts.time_scale > 0.0 && opts.time_scale.is_finite()) {
            return Err(ServerError::Usage(format!("time_scale must be positive, got {}", opts.time_scale)));
        }
        let engine = Engine::new(config.clone(), bundle.clone(), library.clone())?;
        let sink = match &config.output {
            OutputMode::Device => Sink::Device(std::io::BufWriter::new(std::io::stdout())),
            OutputMode::Wav { path } => Sink::Wav {
                path: path.clone(),
                samples: Vec::new(),
            },
        };
        let wcfg = config.window();
        let log = SessionLog::new(SessionHeader {
            config: config.clone(),
            library_hash: library.content_hash(),
            weights_hash: bundle.content_hash(),
            sample_rate: SAMPLE_RATE,
            render_offset_ms: 0.0,
            mode: SessionMode::Live,
        });
        let (cmd_tx, cmd_rx) = mpsc::channel();
        let (audio_tx, audio_rx) = mpsc::channel();
        let progress = Arc::new(Mutex::new(LiveProgress::default()));

        let repeat_fade = config.crossfade_samples();
        let scale = opts.time_scale;
        let audio_thread = std::thread::Builder::new()
            .name("kinetune-audio".into())
            .spawn(move || audio_loop(audio_rx, sink, repeat_fade, scale))
            .map_err(|e| ServerError::Internal(format!("spawn audio thread: {e}")))?;

        let decision = DecisionLoop {
            engine,
            // keep enough history for the window being decided plus slack
            buffer: FrameBuffer::new((wcfg.span_ms() * 3.0) as i64),
            next_start: None,
            audio: audio_tx,
            telemetry,
            progress: progress.clone(),
            cache: HashMap::new(),
            log,
            time_scale: opts.time_scale,
        };
        let engine_thread = std::thread::Builder::new()
            .name("kinetune-engine".into())
            .spawn(move || {
                let mut log = decision.run(cmd_rx);
                // the render starts where the first decision was taken
                log.header.render_offset_ms = log.events.first().map_or(0.0, |e| e.t_ms);
                log
            })
            .map_err(|e| ServerError::Internal(format!("spawn engine thread: {e}")))?;
        info!("live session started");
        Ok(Self {
            commands: cmd_tx,
            progress,
            engine_thread: Some(engine_thread),
            audio_thread: Some(audio_thread),
            log_path: session_dir.map(|d| d.join("session.log")),
        })
    }

    pub fn commands(&self) -> Sender<EngineCommand> {
        self.commands.clone()
    }

    pub fn progress(&self) -> LiveProgress {
        self.progress.lock().expect("progress lock").clone()
    }

    /// Stop deciding, let queued audio play out, and write the log.
    /// Blocks until both threads have finished.
    pub fn stop(mut self) -> Result<(SessionLog, StopSummary)> {
        let _ = self.commands.send(EngineCommand::Stop);
        let log = self
            .engine_thread
            .take()
            .expect("joined once")
            .join()
            .map_err(|_| ServerError::Internal("engine thread panicked".into()))?;
        let audio = self
            .audio_thread
            .take()
            .expect("joined once")
            .join()
            .map_err(|_| ServerError::Internal("audio thread panicked".into()))??;
        if let Some(path) = &self.log_path {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| ServerError::io(dir, e))?;
            }
            log.save(path)?;
        }
        let summary = StopSummary {
            steps: log.events.len(),
            faults: log.events.iter().filter(|e| e.fault.is_some()).count(),
            audio_underruns: audio.underruns,
            samples: audio.samples,
            log: self.log_path.clone(),
            render: audio.render,
        };
        info!("live session stopped after {} steps", summary.steps);
        Ok((log, summary))
    }
}

impl Drop for LiveSession {
    fn drop(&mut self) {
        let _ = self.commands.send(EngineCommand::Stop);
    }
}
