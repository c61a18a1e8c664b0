//! Equal-power crossfades, the offline renderer and its block-streaming twin.
//!
//! Clips are laid end to end: clip `k+1` starts `fade_in` samples before clip
//! `k` ends, and over those samples clip `k` fades out while `k+1` fades in.
//! The streaming mixer evaluates exactly the same per-sample sums as
//! [`render_schedule`], so both produce identical buffers.

use std::collections::VecDeque;
use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use log::warn;

use crate::dsp::AudioClip;
use crate::error::{Error, Result};

/// `(g_out, g_in) = (cos(πt/2), sin(πt/2))`; `t` is clamped into [0, 1].
pub fn crossfade_gains(t: f64) -> (f64, f64) {
    let t = if t.is_nan() {
        warn!("crossfade position NaN, using 0");
        0.0
    } else if !(0.0..=1.0).contains(&t) {
        warn!("crossfade position {t} clamped into [0, 1]");
        t.clamp(0.0, 1.0)
    } else {
        t
    };
    let a = FRAC_PI_2 * t;
    (a.cos(), a.sin())
}

/// Overlap length in samples.
pub fn crossfade_samples(crossfade_ms: f64, sample_rate: u32) -> usize {
    (crossfade_ms * sample_rate as f64 / 1000.0).round() as usize
}

/// Fade position of sample `j` of an `x`-sample overlap.
fn fade_t(j: usize, x: usize) -> f64 {
    if x <= 1 {
        1.0
    } else {
        j as f64 / (x - 1) as f64
    }
}

/// A clip waiting to be played.
#[derive(Debug, Clone, PartialEq)]
pub struct QueuedClip {
    pub id: String,
    pub samples: Arc<[f32]>,
    /// Overlap with the preceding clip, in samples.
    pub fade_in: usize,
}

impl QueuedClip {
    pub fn new(id: impl Into<String>, samples: Arc<[f32]>, fade_in: usize) -> Self {
        Self {
            id: id.into(),
            samples,
            fade_in,
        }
    }
}

/// A clip with its absolute start sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedClip {
    pub clip: QueuedClip,
    pub start: usize,
    pub underrun: bool,
}

impl PlacedClip {
    pub fn end(&self) -> usize {
        self.start + self.clip.samples.len()
    }
}

/// Contribution of `cur` at absolute sample `n`, given the clip after it.
fn contribution(cur: &PlacedClip, next: Option<&PlacedClip>, n: usize) -> f32 {
    if n < cur.start || n >= cur.end() {
        return 0.0;
    }
    let j = n - cur.start;
    let mut g = if j < cur.clip.fade_in {
        crossfade_gains(fade_t(j, cur.clip.fade_in)).1
    } else {
        1.0
    };
    if let Some(next) = next {
        if n >= next.start {
            let k = n - next.start;
            if k >= next.clip.fade_in {
                return 0.0;
            }
            g *= crossfade_gains(fade_t(k, next.clip.fade_in)).0;
        }
    }
    cur.clip.samples[j] * g as f32
}

/// Assign start samples: each clip begins `fade_in` samples before the
/// previous one ends.
pub fn layout(clips: &[QueuedClip]) -> Result<Vec<PlacedClip>> {
    let mut out: Vec<PlacedClip> = Vec::with_capacity(clips.len());
    for (i, clip) in clips.iter().enumerate() {
        if clip.fade_in > clip.samples.len() {
            return Err(Error::invalid(format!(
                "clip `{}` is shorter than its {}-sample fade",
                clip.id, clip.fade_in
            )));
        }
        let mut clip = clip.clone();
        let start = match out.last() {
            None => {
                // the first clip starts from silence
                clip.fade_in = 0;
                0
            }
            Some(prev) => {
                if clip.fade_in > prev.clip.samples.len() {
                    return Err(Error::invalid(format!(
                        "fade into clip {i} is longer than the clip before it"
                    )));
                }
                prev.end() - clip.fade_in
            }
        };
        out.push(PlacedClip {
            clip,
            start,
            underrun: false,
        });
    }
    Ok(out)
}

/// Overlap-add a laid-out schedule into one buffer.
pub fn render_placed(placed: &[PlacedClip]) -> Vec<f32> {
    let len = placed.iter().map(PlacedClip::end).max().unwrap_or(0);
    let mut out = vec![0f32; len];
    for (k, cur) in placed.iter().enumerate() {
        let next = placed.get(k + 1);
        for (n, o) in out.iter_mut().enumerate().take(cur.end()).skip(cur.start) {
            *o += contribution(cur, next, n);
        }
    }
    out
}

/// Offline reference render of a clip sequence.
pub fn render_schedule(clips: &[QueuedClip]) -> Result<Vec<f32>> {
    Ok(render_placed(&layout(clips)?))
}

/// Crossfade `current` into `next`: pass-through outside the overlap.
pub fn mix_output(current: &AudioClip, next: &AudioClip, crossfade_ms: f64, sample_rate: u32) -> Result<Vec<f32>> {
    if current.sample_rate() != sample_rate || next.sample_rate() != sample_rate {
        return Err(Error::invalid(format!(
            "clips at {} Hz and {} Hz, engine runs at {sample_rate} Hz",
            current.sample_rate(),
            next.sample_rate()
        )));
    }
    let x = crossfade_samples(crossfade_ms, sample_rate);
    render_schedule(&[
        QueuedClip::new("current", current.samples().into(), 0),
        QueuedClip::new("next", next.samples().into(), x),
    ])
}

/// Something the mixer did while filling a block.
#[derive(Debug, Clone, PartialEq)]
pub enum MixerEvent {
    /// A clip began at `start` (absolute sample).
    Started { id: String, start: usize, underrun: bool },
}

/// Pull-based mixer for an audio callback. Clips are pushed by the decision
/// loop; when the queue is empty at a transition the current clip repeats.
#[derive(Debug)]
pub struct StreamingMixer {
    queue: VecDeque<QueuedClip>,
    current: Option<PlacedClip>,
    next: Option<PlacedClip>,
    position: usize,
    repeat_fade: usize,
    underruns: usize,
    closed: bool,
    audible_end: usize,
}

impl StreamingMixer {
    /// `repeat_fade` is the overlap used when a clip has to repeat.
    pub fn new(repeat_fade: usize) -> Self {
        Self {
            queue: VecDeque::new(),
            current: None,
            next: None,
            position: 0,
            repeat_fade,
            underruns: 0,
            closed: false,
            audible_end: 0,
        }
    }

    pub fn set_repeat_fade(&mut self, samples: usize) {
        self.repeat_fade = samples;
    }

    pub fn push(&mut self, clip: QueuedClip) {
        self.queue.push_back(clip);
    }

    /// No more clips will come: the queue drains, the last clip plays out
    /// and silence follows instead of repeats.
    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// True once a closed mixer has nothing left to play.
    pub fn is_drained(&self) -> bool {
        self.closed && self.current.is_none() && self.queue.is_empty()
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn position(&self) -> usize {
        self.position
    }

    /// One past the last sample any scheduled clip contributes to.
    pub fn audible_end(&self) -> usize {
        self.audible_end
    }

    pub fn underruns(&self) -> usize {
        self.underruns
    }

    pub fn current_id(&self) -> Option<&str> {
        self.current.as_ref().map(|c| c.clip.id.as_str())
    }

    /// Samples until the next clip must be chosen, if a clip is playing.
    pub fn samples_until_transition(&self) -> Option<usize> {
        let cur = self.current.as_ref()?;
        if self.next.is_some() {
            return Some(0);
        }
        let fade = self.queue.front().map_or(self.repeat_fade, |q| q.fade_in);
        Some(cur.end().saturating_sub(fade).saturating_sub(self.position))
    }

    fn schedule(&mut self, events: &mut Vec<MixerEvent>) {
        let n = self.position;
        match &self.current {
            None => {
                // nothing plays until the first clip arrives
                if let Some(mut clip) = self.queue.pop_front() {
                    clip.fade_in = 0;
                    events.push(MixerEvent::Started {
                        id: clip.id.clone(),
                        start: n,
                        underrun: false,
                    });
                    let placed = PlacedClip {
                        clip,
                        start: n,
                        underrun: false,
                    };
                    self.audible_end = self.audible_end.max(placed.end());
                    self.current = Some(placed);
                }
            }
            Some(cur) if self.next.is_none() => {
                let fade = self.queue.front().map_or(self.repeat_fade, |q| q.fade_in);
                let due = cur.end().saturating_sub(fade.min(cur.clip.samples.len()));
                if n < due || (self.closed && self.queue.is_empty()) {
                    return;
                }
                let (mut clip, underrun) = match self.queue.pop_front() {
                    Some(c) => (c, false),
                    None => {
                        self.underruns += 1;
                        (
                            QueuedClip::new(cur.clip.id.clone(), cur.clip.samples.clone(), self.repeat_fade),
                            true,
                        )
                    }
                };
                // late arrival: shorten the fade to what is left of the current clip
                clip.fade_in = clip.fade_in.min(cur.end() - n).min(clip.samples.len());
                events.push(MixerEvent::Started {
                    id: clip.id.clone(),
                    start: n,
                    underrun,
                });
                let placed = PlacedClip {
                    clip,
                    start: n,
                    underrun,
                };
                self.audible_end = self.audible_end.max(placed.end());
                self.next = Some(placed);
            }
            Some(_) => {}
        }
    }

    /// Render the next `out.len()` samples.
    pub fn fill(&mut self, out: &mut [f32]) -> Vec<MixerEvent> {
        let mut events = Vec::new();
        for o in out.iter_mut() {
            self.schedule(&mut events);
            let n = self.position;
            let mut acc = 0f32;
            if let Some(cur) = &self.current {
                acc += contribution(cur, self.next.as_ref(), n);
            }
            if let Some(next) = &self.next {
                acc += contribution(next, None, n);
            }
            *o = acc;
            self.position += 1;
            // the current clip is done once its fade-out has finished
            let finished = self.current.as_ref().is_some_and(|c| self.position >= c.end());
            if finished {
                self.current = self.next.take();
            }
        }
        events
    }
}
