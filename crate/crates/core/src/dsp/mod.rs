//! Audio transforms: STFT, mel spectrogram images, the 47-value feature
//! vector, and WAV input/output.

mod features;
mod mel;
mod stft;
mod wav;

pub use features::{extract_features, AudioFeatureVector, FEATURE_COUNT, FEATURE_NAMES};
pub use mel::{
    hz_to_mel, mel_filterbank, mel_spectrogram_image, mel_to_hz, SpectrogramImage, SPECTROGRAM_SIZE,
};
pub use stft::{hann_window, magnitudes, stft, Spectrum};
pub use wav::{read_wav, resample, write_wav, write_wav_to};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 22_050;
pub const CLIP_SECONDS: f64 = 3.5;
pub const N_FFT: usize = 1024;

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples
            .iter()
            .position(|s| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(Error::invalid(format!(
                "sample {i} = {} is not a finite value in [-1, 1]",
                samples[i]
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Like [`AudioClip::new`] but clamps into [-1, 1] and zeroes non-finite values.
    pub fn from_clamped(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        let samples = samples
            .into_iter()
            .map(|s| if s.is_finite() { s.clamp(-1.0, 1.0) } else { 0.0 })
            .collect();
        Self::new(samples, sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Keep the centered `seconds` of the clip. Errors when the clip is shorter.
    pub fn center_crop(&self, seconds: f64) -> Result<Self> {
        let want = (seconds * self.sample_rate as f64).round() as usize;
        if self.samples.len() + 1 < want {
            return Err(Error::insufficient(format!(
                "clip is {:.3} s, need {seconds} s",
                self.duration_s()
            )));
        }
        if self.samples.len() <= want {
            return Ok(self.clone());
        }
        let start = (self.samples.len() - want) / 2;
        Ok(Self {
            samples: self.samples[start..start + want].to_vec(),
            sample_rate: self.sample_rate,
        })
    }

    /// Segment `[start_s, start_s + len_s)` clipped to the clip bounds.
    pub fn slice_seconds(&self, start_s: f64, len_s: f64) -> Self {
        let sr = self.sample_rate as f64;
        let a = ((start_s * sr).round().max(0.0) as usize).min(self.samples.len());
        let b = (((start_s + len_s) * sr).round().max(0.0) as usize).min(self.samples.len());
        Self {
            samples: self.samples[a..b].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}
