use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Complex STFT frames, each holding `n_fft / 2 + 1` bins.
pub type Spectrum = Vec<Vec<Complex64>>;

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Short-time Fourier transform with a Hann window.
///
/// With `center`, frame `i` is centered on sample `i * hop` (zero padding at
/// both ends) and there are `ceil(len / hop)` frames. Without it, frames start
/// at `i * hop` and only full frames are produced.
pub fn stft(samples: &[f32], n_fft: usize, hop: usize, center: bool) -> Result<Spectrum> {
    if samples.is_empty() {
        return Err(Error::invalid("stft of an empty signal"));
    }
    if !n_fft.is_power_of_two() || n_fft < 2 {
        return Err(Error::invalid(format!("n_fft {n_fft} is not a power of two")));
    }
    if hop == 0 {
        return Err(Error::invalid("hop must be positive"));
    }
    let (padded, frames): (Vec<f64>, usize) = if center {
        let pad = n_fft / 2;
        let mut buf = vec![0.0; pad];
        buf.extend(samples.iter().map(|&s| s as f64));
        buf.extend(std::iter::repeat_n(0.0, pad + hop));
        (buf, samples.len().div_ceil(hop))
    } else {
        if samples.len() < n_fft {
            return Err(Error::insufficient(format!(
                "{} samples is shorter than one {n_fft}-point frame",
                samples.len()
            )));
        }
        let buf = samples.iter().map(|&s| s as f64).collect();
        (buf, (samples.len() - n_fft) / hop + 1)
    };

    let window = hann_window(n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let mut out = Vec::with_capacity(frames);
    let mut buf = vec![Complex64::default(); n_fft];
    for f in 0..frames {
        let start = f * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex64::new(padded[start + i] * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        out.push(buf[..n_fft / 2 + 1].to_vec());
    }
    Ok(out)
}

pub fn magnitudes(spec: &Spectrum) -> Vec<Vec<f64>> {
    spec.iter()
        .map(|frame| frame.iter().map(|c| c.norm()).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, n: usize) -> Vec<f32> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / 22050.0).sin() as f32)
            .collect()
    }

    #[test]
    fn zero_signal_zero_spectrum() {
        let spec = stft(&vec![0.0; 5000], 1024, 256, true).unwrap();
        assert!(magnitudes(&spec).iter().flatten().all(|&m| m == 0.0));
    }

    #[test]
    fn frame_counts() {
        assert_eq!(stft(&vec![0.1; 5000], 1024, 256, true).unwrap().len(), 20);
        assert_eq!(stft(&vec![0.1; 5000], 1024, 512, false).unwrap().len(), 8);
        assert_eq!(stft(&vec![0.1; 5000], 1024, 256, true).unwrap()[0].len(), 513);
    }

    #[test]
    fn sine_peak_matches_direct_dft() {
        let x = sine(440.0, 4096);
        let spec = stft(&x, 1024, 512, false).unwrap();
        let mags = magnitudes(&spec);
        let peak = mags[2]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(peak, 20);

        // brute-force DFT of the same windowed frame
        let w = hann_window(1024);
        let frame = &x[1024..2048];
        for k in [0usize, 19, 20, 21, 100] {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (n, &s) in frame.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / 1024.0;
                re += s as f64 * w[n] * ang.cos();
                im += s as f64 * w[n] * ang.sin();
            }
            assert!((re.hypot(im) - mags[2][k]).abs() < 1e-9);
        }
    }

    #[test]
    fn dc_concentrates_in_bin_zero() {
        let spec = stft(&vec![0.5; 4096], 1024, 256, false).unwrap();
        for frame in magnitudes(&spec) {
            let total: f64 = frame.iter().map(|m| m * m).sum();
            assert!(frame[0] * frame[0] / total > 0.6);
            assert!(frame[0] > frame[1] && frame[3] < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(stft(&[], 1024, 256, true).is_err());
        assert!(stft(&[0.0; 100], 1000, 256, true).is_err());
        assert!(matches!(
            stft(&[0.0; 100], 1024, 256, false),
            Err(Error::InsufficientData(_))
        ));
    }
}
