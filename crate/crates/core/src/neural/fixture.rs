//! A hand-set bundle that couples movement energy to spectral change.
//!
//! The movement encoder measures how much of the trajectory image is lit,
//! the audio encoder measures frame-to-frame change in the spectrogram, and
//! the generator passes the direction of the summed latent through its two
//! normalized hidden layers. Energetic windows therefore predict latents
//! pointing at clips with busy spectrograms, and calm windows at steady ones.
//! It stands in for trained weights in demos and fixture tests.

use super::bundle::{Architecture, WeightBundle};
use super::tensor::Tensor;

/// Latent axis carrying the measured quantity.
const SIGNAL: usize = 0;
/// Latent axis carrying a constant reference.
const REFERENCE: usize = 1;

const MOVEMENT_GAIN: f32 = 12.0;
const MOVEMENT_OFFSET: f32 = 1.5;
const MOVEMENT_REFERENCE: f32 = 0.25;
const AUDIO_GAIN: f32 = 10.0;
const AUDIO_OFFSET: f32 = 0.5;
const AUDIO_REFERENCE: f32 = 0.25;

fn set(t: &mut Tensor, idx: &[usize], value: f32) {
    let dims = t.dims().to_vec();
    let flat = idx.iter().zip(&dims).fold(0, |acc, (&i, &d)| acc * d + i);
    t.data_mut()[flat] = value;
}

pub fn coupled_bundle() -> WeightBundle {
    let arch = Architecture::standard();
    WeightBundle::from_fn(arch, |name, dims| {
        let mut t = Tensor::zeros(dims.to_vec());
        let (section, rest) = name.split_once('.').expect("prefixed tensor name");
        match (section, rest) {
            // lit-pixel density, averaged down to the final 8×8 map
            ("movement_encoder", "conv1.weight") => {
                for ky in 0..4 {
                    for kx in 0..4 {
                        for ci in 0..3 {
                            set(&mut t, &[ky, kx, ci, 0], 1.0 / 16.0);
                        }
                    }
                }
            }
            // rectified time differences of the spectrogram in channels 0 and 1
            ("audio_encoder", "conv1.weight") => {
                for ky in 0..4 {
                    set(&mut t, &[ky, 1, 0, 0], 0.25);
                    set(&mut t, &[ky, 2, 0, 0], -0.25);
                    set(&mut t, &[ky, 1, 0, 1], -0.25);
                    set(&mut t, &[ky, 2, 0, 1], 0.25);
                }
            }
            ("audio_encoder", "conv2.weight") => {
                for ky in 0..4 {
                    for kx in 0..4 {
                        set(&mut t, &[ky, kx, 0, 0], 1.0 / 16.0);
                        set(&mut t, &[ky, kx, 1, 0], 1.0 / 16.0);
                    }
                }
            }
            (_, w) if w.starts_with("conv") && w.ends_with(".weight") => {
                for ky in 0..4 {
                    for kx in 0..4 {
                        set(&mut t, &[ky, kx, 0, 0], 1.0 / 16.0);
                    }
                }
            }
            (enc, "head.mu.weight") => {
                let gain = if enc == "movement_encoder" { MOVEMENT_GAIN } else { AUDIO_GAIN };
                let cells = dims[0] / super::ENCODER_CHANNELS[4];
                for cell in 0..cells {
                    // channel 0 of every cell of the flattened map
                    set(&mut t, &[cell * super::ENCODER_CHANNELS[4], SIGNAL], gain / cells as f32);
                }
            }
            (enc, "head.mu.bias") => {
                let (offset, reference) = if enc == "movement_encoder" {
                    (MOVEMENT_OFFSET, MOVEMENT_REFERENCE)
                } else {
                    (AUDIO_OFFSET, AUDIO_REFERENCE)
                };
                set(&mut t, &[SIGNAL], -offset);
                set(&mut t, &[REFERENCE], reference);
            }
            // generator: carry ±s0 and ±s1 through both normalized layers
            ("generator", "fc1.weight") => {
                set(&mut t, &[SIGNAL, 0], 1.0);
                set(&mut t, &[SIGNAL, 1], -1.0);
                set(&mut t, &[REFERENCE, 2], 1.0);
                set(&mut t, &[REFERENCE, 3], -1.0);
            }
            ("generator", "fc2.weight") => {
                for (pos, neg) in [(0, 1), (2, 3)] {
                    set(&mut t, &[pos, pos], 1.0);
                    set(&mut t, &[neg, pos], -1.0);
                    set(&mut t, &[pos, neg], -1.0);
                    set(&mut t, &[neg, neg], 1.0);
                }
            }
            ("generator", "out.weight") => {
                set(&mut t, &[0, SIGNAL], 1.0);
                set(&mut t, &[1, SIGNAL], -1.0);
                set(&mut t, &[2, REFERENCE], 1.0);
                set(&mut t, &[3, REFERENCE], -1.0);
            }
            (_, w) if w.ends_with(".gamma") => t.data_mut().fill(1.0),
            _ => {}
        }
        t
    })
    .expect("standard architecture is consistent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{LatentVec, LATENT_DIM};

    fn latent(s0: f32, s1: f32) -> LatentVec {
        let mut v = vec![0.0; LATENT_DIM];
        v[SIGNAL] = s0;
        v[REFERENCE] = s1;
        LatentVec::new(v).unwrap()
    }

    #[test]
    fn generator_preserves_direction() {
        let b = coupled_bundle();
        let g = b.generator();
        for (s0, s1) in [(1.0, 0.5), (-2.0, 0.5), (0.1, 0.5), (-0.3, 0.2)] {
            let out = g.forward(&latent(s0, 0.0), &latent(0.0, s1)).unwrap();
            let o = out.as_slice();
            let want = (s0 as f64).atan2(s1 as f64);
            let got = (o[SIGNAL] as f64).atan2(o[REFERENCE] as f64);
            assert!((want - got).abs() < 1e-3, "{s0},{s1}: {want} vs {got}");
            assert!(o[2..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn encoders_track_their_measurements() {
        let b = coupled_bundle();
        let enc = b.movement_encoder();
        let dark = enc.encode(&Tensor::zeros(vec![256, 256, 3])).unwrap().0;
        let lit = enc
            .encode(&Tensor::new(vec![256, 256, 3], vec![0.1; 256 * 256 * 3]).unwrap())
            .unwrap()
            .0;
        assert!(lit.as_slice()[SIGNAL] > dark.as_slice()[SIGNAL]);
        assert_eq!(dark.as_slice()[REFERENCE], MOVEMENT_REFERENCE);

        let audio = b.audio_encoder();
        let flat = audio.encode(&Tensor::new(vec![224, 224, 1], vec![0.5; 224 * 224]).unwrap()).unwrap().0;
        let stripes: Vec<f32> = (0..224 * 224).map(|i| (i % 2) as f32).collect();
        let busy = audio.encode(&Tensor::new(vec![224, 224, 1], stripes).unwrap()).unwrap().0;
        assert!(busy.as_slice()[SIGNAL] > flat.as_slice()[SIGNAL]);
    }
}
