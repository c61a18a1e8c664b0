//! Frame-averaged audio descriptors used by the session analysis.
//!
//! Frames are 1024-point Hann windows advanced by 512 samples without center
//! padding, so a clip shorter than one frame has no features.

use serde::{Deserialize, Serialize};

use super::{mel_filterbank, stft, AudioClip, N_FFT};
use crate::error::{Error, Result};

pub const FEATURE_COUNT: usize = 47;
pub const FEATURE_HOP: usize = 512;
pub const MFCC_BANDS: usize = 40;
pub const MFCC_COUNT: usize = 13;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "mfcc_1", "mfcc_2", "mfcc_3", "mfcc_4", "mfcc_5", "mfcc_6", "mfcc_7", "mfcc_8", "mfcc_9",
    "mfcc_10", "mfcc_11", "mfcc_12", "mfcc_13",
    "spec_contrast_1", "spec_contrast_2", "spec_contrast_3", "spec_contrast_4",
    "spec_contrast_5", "spec_contrast_6", "spec_contrast_7",
    "chroma_1", "chroma_2", "chroma_3", "chroma_4", "chroma_5", "chroma_6", "chroma_7",
    "chroma_8", "chroma_9", "chroma_10", "chroma_11", "chroma_12",
    "spectral_flux", "spectral_centroid", "spectral_bandwidth", "spectral_rolloff",
    "spectral_flatness", "zero_crossing_rate", "rms", "spectral_crest", "spectral_entropy",
    "dissonance", "inharmonicity", "loudness", "onset_rate", "tempo_estimate",
    "high_frequency_content",
];

const CONTRAST: usize = 13;
const CHROMA: usize = 20;
const SCALARS: usize = 32;

/// Spectral-contrast band edges in Hz; the last band runs to Nyquist.
const CONTRAST_EDGES: [f64; 7] = [0.0, 200.0, 400.0, 800.0, 1600.0, 3200.0, 6400.0];
const CONTRAST_QUANTILE: f64 = 0.02;
const ROLLOFF: f64 = 0.85;
const PEAK_COUNT: usize = 20;
const DB_FLOOR: f64 = 1e-10;

/// The 47 named descriptors, in [`FEATURE_NAMES`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioFeatureVector {
    pub values: Vec<f64>,
}

impl AudioFeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.values[i])
    }

    pub fn mfcc(&self) -> &[f64] {
        &self.values[..MFCC_COUNT]
    }

    pub fn chroma(&self) -> &[f64] {
        &self.values[CHROMA..CHROMA + 12]
    }

    pub fn contrast(&self) -> &[f64] {
        &self.values[CONTRAST..CONTRAST + 7]
    }
}

/// Orthonormal DCT-II, first `n_out` coefficients.
fn dct2(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n).cos())
                .sum();
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            s * scale
        })
        .collect()
}

fn a_weight_gain(f: f64) -> f64 {
    if f <= 0.0 {
        return 0.0;
    }
    let f2 = f * f;
    let ra = 12194.0f64.powi(2) * f2 * f2
        / ((f2 + 20.6f64.powi(2))
            * ((f2 + 107.7f64.powi(2)) * (f2 + 737.9f64.powi(2))).sqrt()
            * (f2 + 12194.0f64.powi(2)));
    // +2 dB normalizes the curve to unity at 1 kHz; returned as a power gain
    (ra * ra) * 10f64.powf(2.0 / 10.0)
}

/// Strongest local maxima of a magnitude frame as (frequency, magnitude).
fn spectral_peaks(mag: &[f64], bin_hz: f64) -> Vec<(f64, f64)> {
    let mut peaks: Vec<(usize, f64)> = (1..mag.len() - 1)
        .filter(|&k| mag[k] > mag[k - 1] && mag[k] >= mag[k + 1] && mag[k] > 0.0)
        .map(|k| (k, mag[k]))
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    peaks.truncate(PEAK_COUNT);
    peaks.sort_by_key(|p| p.0);
    peaks.into_iter().map(|(k, m)| (k as f64 * bin_hz, m)).collect()
}

/// Plomp–Levelt roughness summed over peak pairs, normalized by peak energy.
fn dissonance(peaks: &[(f64, f64)]) -> f64 {
    let energy: f64 = peaks.iter().map(|p| p.1 * p.1).sum();
    if energy == 0.0 {
        return 0.0;
    }
    let mut d = 0.0;
    for (i, &(f1, a1)) in peaks.iter().enumerate() {
        for &(f2, a2) in &peaks[i + 1..] {
            let s = 0.24 / (0.021 * f1.min(f2) + 19.0);
            let df = (f2 - f1).abs();
            d += a1 * a2 * ((-3.5 * s * df).exp() - (-5.75 * s * df).exp());
        }
    }
    d / energy
}

/// Energy-weighted deviation of peaks from the harmonic series of the lowest
/// strong peak.
fn inharmonicity(peaks: &[(f64, f64)]) -> f64 {
    let strongest = peaks.iter().map(|p| p.1).fold(0.0, f64::max);
    let Some(&(f0, _)) = peaks.iter().find(|p| p.1 >= 0.1 * strongest) else {
        return 0.0;
    };
    if f0 <= 0.0 {
        return 0.0;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for &(f, a) in peaks {
        let h = (f / f0).round().max(1.0);
        num += (f - h * f0).abs() * a * a;
        den += a * a;
    }
    if den == 0.0 {
        0.0
    } else {
        num / (f0 * den)
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn extract_features(clip: &AudioClip) -> Result<AudioFeatureVector> {
    let sr = clip.sample_rate() as f64;
    let samples = clip.samples();
    if samples.len() < N_FFT {
        return Err(Error::insufficient(format!(
            "{} samples is shorter than one {N_FFT}-sample analysis frame",
            samples.len()
        )));
    }
    let spec = stft(samples, N_FFT, FEATURE_HOP, false)?;
    let bins = N_FFT / 2 + 1;
    let bin_hz = sr / N_FFT as f64;
    let freqs: Vec<f64> = (0..bins).map(|k| k as f64 * bin_hz).collect();
    let fb = mel_filterbank(MFCC_BANDS, N_FFT, clip.sample_rate(), 0.0, sr / 2.0);
    let a_gain: Vec<f64> = freqs.iter().map(|&f| a_weight_gain(f)).collect();
    let pitch_class: Vec<Option<usize>> = freqs
        .iter()
        .map(|&f| {
            (f >= 27.5).then(|| ((12.0 * (f / 440.0).log2()).round() as i64 + 9).rem_euclid(12) as usize)
        })
        .collect();
    let band_of: Vec<usize> = freqs
        .iter()
        .map(|&f| CONTRAST_EDGES.iter().rposition(|&e| f >= e).unwrap_or(0))
        .collect();

    let n_frames = spec.len();
    let mut acc = vec![0f64; FEATURE_COUNT];
    let mut flux = Vec::with_capacity(n_frames);
    let mut onset_env = Vec::with_capacity(n_frames);
    let mut prev_mag: Option<Vec<f64>> = None;

    for (t, frame) in spec.iter().enumerate() {
        let mag: Vec<f64> = frame.iter().map(|c| c.norm()).collect();
        let pow: Vec<f64> = mag.iter().map(|m| m * m).collect();
        let mag_sum: f64 = mag.iter().sum();
        let pow_sum: f64 = pow.iter().sum();

        // MFCC
        let log_mel: Vec<f64> = fb
            .iter()
            .map(|row| {
                let e: f64 = row.iter().zip(&pow).map(|(w, p)| w * p).sum();
                10.0 * e.max(DB_FLOOR).log10()
            })
            .collect();
        for (k, c) in dct2(&log_mel, MFCC_COUNT).into_iter().enumerate() {
            acc[k] += c;
        }

        // spectral contrast
        let mut bands: Vec<Vec<f64>> = vec![Vec::new(); CONTRAST_EDGES.len()];
        for (k, &m) in mag.iter().enumerate().skip(1) {
            bands[band_of[k]].push(m);
        }
        for (b, band) in bands.iter_mut().enumerate() {
            if band.is_empty() {
                continue;
            }
            band.sort_by(f64::total_cmp);
            let q = ((CONTRAST_QUANTILE * band.len() as f64).round() as usize).max(1);
            let valley = mean(&band[..q]);
            let peak = mean(&band[band.len() - q..]);
            acc[CONTRAST + b] += 20.0 * ((peak + DB_FLOOR) / (valley + DB_FLOOR)).log10();
        }

        // chroma
        let mut chroma = [0f64; 12];
        for (k, &p) in pow.iter().enumerate() {
            if let Some(pc) = pitch_class[k] {
                chroma[pc] += p;
            }
        }
        let chroma_sum: f64 = chroma.iter().sum();
        if chroma_sum > 0.0 {
            for (i, c) in chroma.iter().enumerate() {
                acc[CHROMA + i] += c / chroma_sum;
            }
        }

        // flux and onset envelope
        match &prev_mag {
            Some(prev) => {
                let (mut sq, mut rise) = (0.0, 0.0);
                for (a, b) in mag.iter().zip(prev) {
                    let d = a - b;
                    sq += d * d;
                    rise += d.max(0.0);
                }
                flux.push(sq.sqrt());
                onset_env.push(rise);
            }
            None => onset_env.push(0.0),
        }

        let mut s = [0f64; 15];
        if mag_sum > 0.0 {
            let centroid = freqs.iter().zip(&mag).map(|(f, m)| f * m).sum::<f64>() / mag_sum;
            s[1] = centroid;
            s[2] = (freqs
                .iter()
                .zip(&mag)
                .map(|(f, m)| m * (f - centroid).powi(2))
                .sum::<f64>()
                / mag_sum)
                .sqrt();
            let mut cum = 0.0;
            let target = ROLLOFF * mag_sum;
            s[3] = freqs[bins - 1];
            for (k, m) in mag.iter().enumerate() {
                cum += m;
                if cum >= target {
                    s[3] = freqs[k];
                    break;
                }
            }
            s[7] = mag.iter().copied().fold(0.0, f64::max) / (mag_sum / bins as f64);
        }
        // flatness of the power spectrum; a silent frame is perfectly flat
        let log_mean = pow.iter().map(|p| (p + 1e-20).ln()).sum::<f64>() / bins as f64;
        s[4] = (log_mean.exp() / (pow_sum / bins as f64 + 1e-20)).clamp(0.0, 1.0);

        let start = t * FEATURE_HOP;
        let raw = &samples[start..start + N_FFT];
        let crossings = raw
            .windows(2)
            .filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0))
            .count();
        s[5] = crossings as f64 / (N_FFT - 1) as f64;
        s[6] = (raw.iter().map(|&x| (x as f64).powi(2)).sum::<f64>() / N_FFT as f64).sqrt();

        if pow_sum > 0.0 {
            let h: f64 = pow
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| {
                    let q = p / pow_sum;
                    -q * q.ln()
                })
                .sum();
            s[8] = (h / (bins as f64).ln()).clamp(0.0, 1.0);
        }
        let peaks = spectral_peaks(&mag, bin_hz);
        s[9] = dissonance(&peaks);
        s[10] = inharmonicity(&peaks);
        let weighted: f64 = pow.iter().zip(&a_gain).map(|(p, g)| p * g).sum::<f64>();
        s[11] = 10.0 * (weighted / (bins as f64 * (N_FFT as f64).powi(2)) + 1e-12).log10();
        s[14] = pow
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p)
            .sum::<f64>()
            / bins as f64;

        for (i, v) in s.iter().enumerate() {
            acc[SCALARS + i] += v;
        }
        prev_mag = Some(mag);
    }

    for v in acc.iter_mut() {
        *v /= n_frames as f64;
    }
    acc[SCALARS] = mean(&flux);

    let frame_rate = sr / FEATURE_HOP as f64;
    acc[SCALARS + 12] = onset_count(&onset_env) as f64 / clip.duration_s();
    acc[SCALARS + 13] = tempo_bpm(&onset_env, frame_rate);

    debug_assert!(acc.iter().all(|v| v.is_finite()));
    Ok(AudioFeatureVector { values: acc })
}

/// Local maxima of the onset envelope that clear mean + one standard deviation.
fn onset_count(env: &[f64]) -> usize {
    if env.len() < 3 {
        return 0;
    }
    let m = mean(env);
    let sd = (env.iter().map(|e| (e - m).powi(2)).sum::<f64>() / env.len() as f64).sqrt();
    let threshold = m + sd;
    (1..env.len() - 1)
        .filter(|&i| env[i] > env[i - 1] && env[i] >= env[i + 1] && env[i] > threshold)
        .count()
}

/// Autocorrelation peak of the onset envelope within 60–180 BPM.
fn tempo_bpm(env: &[f64], frame_rate: f64) -> f64 {
    let m = mean(env);
    let centered: Vec<f64> = env.iter().map(|e| e - m).collect();
    let min_lag = ((60.0 * frame_rate / 180.0).floor() as usize).max(1);
    let max_lag = ((60.0 * frame_rate / 60.0).ceil() as usize).min(centered.len().saturating_sub(1));
    if min_lag > max_lag {
        return 0.0;
    }
    let mut best = (min_lag, f64::NEG_INFINITY);
    for lag in min_lag..=max_lag {
        let r: f64 = centered[lag..]
            .iter()
            .zip(&centered)
            .map(|(a, b)| a * b)
            .sum();
        if r > best.1 {
            best = (lag, r);
        }
    }
    60.0 * frame_rate / best.0 as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SAMPLE_RATE;
    use rand::{Rng, SeedableRng};

    fn idx(name: &str) -> usize {
        FEATURE_NAMES.iter().position(|n| *n == name).unwrap()
    }

    fn tone(freq: f64, seconds: f64, amp: f64) -> AudioClip {
        let n = (seconds * SAMPLE_RATE as f64) as usize;
        let s = (0..n)
            .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin()) as f32)
            .collect();
        AudioClip::new(s, SAMPLE_RATE).unwrap()
    }

    fn noise(seed: u64, seconds: f64, amp: f32) -> AudioClip {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = (seconds * SAMPLE_RATE as f64) as usize;
        let s = (0..n).map(|_| amp * rng.random_range(-1.0f32..1.0)).collect();
        AudioClip::new(s, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn registry_is_47_unique_names() {
        let set: std::collections::HashSet<_> = FEATURE_NAMES.iter().collect();
        assert_eq!(set.len(), 47);
        assert_eq!(FEATURE_NAMES[CONTRAST], "spec_contrast_1");
        assert_eq!(FEATURE_NAMES[CHROMA], "chroma_1");
        assert_eq!(FEATURE_NAMES[SCALARS], "spectral_flux");
        assert_eq!(FEATURE_NAMES[SCALARS + 14], "high_frequency_content");
    }

    #[test]
    fn looped_frame_has_zero_flux() {
        let period: Vec<f32> = (0..FEATURE_HOP)
            .map(|i| (0.3 * (2.0 * std::f64::consts::PI * 5.0 * i as f64 / FEATURE_HOP as f64).sin()) as f32)
            .collect();
        let samples: Vec<f32> = period.iter().copied().cycle().take(SAMPLE_RATE as usize).collect();
        let f = extract_features(&AudioClip::new(samples, SAMPLE_RATE).unwrap()).unwrap();
        assert_eq!(f.values[idx("spectral_flux")], 0.0);
    }

    #[test]
    fn a440_chroma_and_flatness() {
        let f = extract_features(&tone(440.0, 1.0, 0.5)).unwrap();
        let chroma = f.chroma();
        let a = chroma[9];
        assert!(chroma.iter().all(|&c| c <= a));
        assert!(a > 0.9, "A holds {a}");
        assert!(f.values[idx("spectral_flatness")] < 0.01);
    }

    #[test]
    fn deterministic_and_finite() {
        let clip = noise(11, 1.5, 0.4);
        let a = extract_features(&clip).unwrap();
        assert_eq!(a, extract_features(&clip).unwrap());
        assert_eq!(a.values.len(), 47);
        assert!(a.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn silence_is_finite() {
        let f = extract_features(&AudioClip::new(vec![0.0; 30_000], SAMPLE_RATE).unwrap()).unwrap();
        assert!(f.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn too_short_is_insufficient() {
        let err = extract_features(&AudioClip::new(vec![0.0; 1000], SAMPLE_RATE).unwrap()).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn amplitude_scaling() {
        let base = noise(5, 1.2, 0.2);
        let scaled = AudioClip::new(base.samples().iter().map(|s| s * 3.0).collect(), SAMPLE_RATE).unwrap();
        let a = extract_features(&base).unwrap();
        let b = extract_features(&scaled).unwrap();
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-6 * x.abs().max(1.0);
        for k in 1..MFCC_COUNT {
            assert!(close(a.values[k], b.values[k]), "mfcc_{}", k + 1);
        }
        for k in 0..12 {
            assert!(close(a.chroma()[k], b.chroma()[k]));
        }
        assert!(close(a.values[idx("spectral_centroid")], b.values[idx("spectral_centroid")]));
        assert!(close(3.0 * a.values[idx("rms")], b.values[idx("rms")]));
    }

    #[test]
    fn bounded_features() {
        for seed in 0..4 {
            let f = extract_features(&noise(seed, 1.0, 0.5)).unwrap();
            assert!(f.values[idx("spectral_flux")] >= 0.0);
            let flat = f.values[idx("spectral_flatness")];
            let zcr = f.values[idx("zero_crossing_rate")];
            assert!((0.0..=1.0).contains(&flat) && (0.0..=1.0).contains(&zcr));
            let tempo = f.values[idx("tempo_estimate")];
            assert!((60.0..=181.0).contains(&tempo));
        }
    }

    #[test]
    fn dissonance_of_close_partials_exceeds_octave() {
        let close = dissonance(&[(440.0, 1.0), (466.0, 1.0)]);
        let octave = dissonance(&[(440.0, 1.0), (880.0, 1.0)]);
        assert!(close > octave && octave >= 0.0);
        assert!(inharmonicity(&[(200.0, 1.0), (400.0, 0.5), (600.0, 0.3)]).abs() < 1e-12);
        assert!(inharmonicity(&[(200.0, 1.0), (430.0, 0.5)]) > 0.0);
    }
}
