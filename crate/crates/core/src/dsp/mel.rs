use super::{magnitudes, stft, AudioClip, CLIP_SECONDS, N_FFT, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const SPECTROGRAM_SIZE: usize = 224;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with unit peak, `n_mels` rows by `n_fft / 2 + 1` bins.
///
/// A filter narrower than the bin spacing would catch no bin at all; such
/// filters take weight 1 on the bin nearest their center instead.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Vec<Vec<f64>> {
    let bins = n_fft / 2 + 1;
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    (0..n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut row: Vec<f64> = (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - left) / (center - left);
                    let down = (right - f) / (right - center);
                    up.min(down).max(0.0)
                })
                .collect();
            if row.iter().all(|&w| w == 0.0) {
                let nearest = ((center / bin_hz).round() as usize).min(bins - 1);
                row[nearest] = 1.0;
            }
            row
        })
        .collect()
}

/// 224×224 single-channel image in [0, 1]; row `r` is mel band `r` (lowest
/// first), column `c` is time frame `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramImage {
    data: Vec<f32>,
}

impl SpectrogramImage {
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * SPECTROGRAM_SIZE + col]
    }

    pub fn write_png<W: std::io::Write>(&self, w: W) -> Result<()> {
        // flip so low frequencies sit at the bottom of the picture
        let mut bytes = Vec::with_capacity(self.data.len());
        for row in (0..SPECTROGRAM_SIZE).rev() {
            for col in 0..SPECTROGRAM_SIZE {
                bytes.push((self.get(row, col) * 255.0).round() as u8);
            }
        }
        crate::raster::write_png(
            w,
            SPECTROGRAM_SIZE as u32,
            SPECTROGRAM_SIZE as u32,
            png::ColorType::Grayscale,
            &bytes,
        )
    }
}

/// Log-magnitude mel spectrogram of a library-length clip, min-max scaled.
pub fn mel_spectrogram_image(clip: &AudioClip) -> Result<SpectrogramImage> {
    if clip.sample_rate() != SAMPLE_RATE {
        return Err(Error::invalid(format!(
            "spectrograms are computed at {SAMPLE_RATE} Hz, clip is {} Hz",
            clip.sample_rate()
        )));
    }
    let dur = clip.duration_s();
    if (dur - CLIP_SECONDS).abs() > 0.05 * CLIP_SECONDS {
        return Err(Error::invalid(format!(
            "clip lasts {dur:.3} s, expected {CLIP_SECONDS} s ±5%"
        )));
    }
    let hop = clip.len() / SPECTROGRAM_SIZE;
    let mags = magnitudes(&stft(clip.samples(), N_FFT, hop, true)?);
    let offset = (mags.len() - SPECTROGRAM_SIZE) / 2;
    let fb = mel_filterbank(SPECTROGRAM_SIZE, N_FFT, SAMPLE_RATE, 0.0, SAMPLE_RATE as f64 / 2.0);

    let mut data = vec![0f64; SPECTROGRAM_SIZE * SPECTROGRAM_SIZE];
    for (col, frame) in mags[offset..offset + SPECTROGRAM_SIZE].iter().enumerate() {
        for (row, filt) in fb.iter().enumerate() {
            let e: f64 = filt.iter().zip(frame).map(|(w, m)| w * m).sum();
            data[row * SPECTROGRAM_SIZE + col] = e.ln_1p();
        }
    }
    let min = data.iter().copied().fold(f64::INFINITY, f64::min);
    let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let data = if max > min {
        data.iter().map(|v| ((v - min) / (max - min)) as f32).collect()
    } else {
        vec![0.0; data.len()]
    };
    Ok(SpectrogramImage { data })
}
