//! Deterministic synthetic material: pose replays with calm and energetic
//! phases, steady tonal clips and percussive burst clips. Used by demos,
//! fixtures and the `simulate` command when no recordings are at hand.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{write_wav, AudioClip, CLIP_SECONDS, SAMPLE_RATE};
use crate::error::Result;
use crate::pose::{PoseFrame, LANDMARK_COUNT};

/// Rest pose: head, left/right wrist, left/right ankle.
const REST: [[f64; 2]; LANDMARK_COUNT] = [[0.0, -0.6], [-0.4, -0.1], [0.4, -0.1], [-0.2, 0.8], [0.2, 0.8]];

/// One stretch of a replay: `seconds` long, swinging with `amplitude`
/// (normalized units) at `rate_hz`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    pub seconds: f64,
    pub amplitude: f64,
    pub rate_hz: f64,
}

impl Phase {
    pub const fn calm(seconds: f64) -> Self {
        Self {
            seconds,
            amplitude: 0.02,
            rate_hz: 0.3,
        }
    }

    pub const fn energetic(seconds: f64) -> Self {
        Self {
            seconds,
            amplitude: 0.35,
            rate_hz: 1.2,
        }
    }
}

/// A replay at `fps` made of consecutive phases; timestamps start at 0.
pub fn pose_replay(phases: &[Phase], fps: f64, seed: u64) -> Vec<PoseFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase_offsets: [[f64; 2]; LANDMARK_COUNT] = std::array::from_fn(|_| [rng.random::<f64>() * TAU, rng.random::<f64>() * TAU]);
    let total: f64 = phases.iter().map(|p| p.seconds).sum();
    let n = (total * fps).round() as usize;
    let mut out = Vec::with_capacity(n);
    // phase angle is integrated so rate changes do not jump
    let mut angle = 0.0;
    for i in 0..n {
        let t = i as f64 / fps;
        let mut acc = 0.0;
        let phase = phases
            .iter()
            .find(|p| {
                acc += p.seconds;
                t < acc
            })
            .unwrap_or(phases.last().expect("at least one phase"));
        angle += TAU * phase.rate_hz / fps;
        let points = std::array::from_fn(|l| {
            let [ox, oy] = phase_offsets[l];
            let jitter = 0.002;
            let x = REST[l][0] + phase.amplitude * (angle + ox).sin() + jitter * (rng.random::<f64>() - 0.5);
            let y = REST[l][1] + phase.amplitude * (1.3 * angle + oy).cos() + jitter * (rng.random::<f64>() - 0.5);
            [x.clamp(-1.0, 1.0), y.clamp(-1.0, 1.0)]
        });
        out.push(PoseFrame::new((t * 1000.0).round() as i64, points));
    }
    out
}

/// Calm and energetic phases of `phase_s` seconds, alternating, calm first.
pub fn alternating_replay(duration_s: f64, phase_s: f64, fps: f64, seed: u64) -> Vec<PoseFrame> {
    let mut phases = Vec::new();
    let mut t = 0.0;
    let mut calm = true;
    while t < duration_s {
        let len = phase_s.min(duration_s - t);
        phases.push(if calm { Phase::calm(len) } else { Phase::energetic(len) });
        calm = !calm;
        t += len;
    }
    pose_replay(&phases, fps, seed)
}

fn clip_len() -> usize {
    (CLIP_SECONDS * SAMPLE_RATE as f64).round() as usize
}

/// A sustained chord of a few partials: little spectral change over time.
pub fn steady_clip(seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let root = 110.0 * 2f64.powf(rng.random_range(0..24) as f64 / 12.0);
    let partials = [1.0, 1.5, 2.0, 3.0];
    let sr = SAMPLE_RATE as f64;
    let samples = (0..clip_len())
        .map(|i| {
            let t = i as f64 / sr;
            let v: f64 = partials
                .iter()
                .enumerate()
                .map(|(k, p)| 0.25 / (k + 1) as f64 * (TAU * root * p * t).sin())
                .sum();
            v as f32
        })
        .collect();
    AudioClip::new(samples, SAMPLE_RATE).expect("bounded chord")
}

/// Short decaying noise bursts on a fast grid: spectrally busy.
pub fn burst_clip(seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = SAMPLE_RATE as f64;
    let period = (sr / rng.random_range(6.0..10.0)) as usize;
    let decay = rng.random_range(0.004..0.01) * sr;
    let samples = (0..clip_len())
        .map(|i| {
            let env = (-((i % period) as f64) / decay).exp();
            (0.8 * env * (rng.random::<f64>() * 2.0 - 1.0)) as f32
        })
        .collect();
    AudioClip::new(samples, SAMPLE_RATE).expect("bounded bursts")
}

/// Write `steady` tonal and `busy` burst clips as WAVs into `dir`.
pub fn write_two_cluster_library(dir: &Path, steady: usize, busy: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    let mut paths = Vec::new();
    for i in 0..steady {
        let p = dir.join(format!("steady_{i:03}.wav"));
        write_wav(&p, steady_clip(seed.wrapping_add(i as u64)).samples(), SAMPLE_RATE)?;
        paths.push(p);
    }
    for i in 0..busy {
        let p = dir.join(format!("busy_{i:03}.wav"));
        write_wav(&p, burst_clip(seed.wrapping_add(1000 + i as u64)).samples(), SAMPLE_RATE)?;
        paths.push(p);
    }
    Ok(paths)
}
