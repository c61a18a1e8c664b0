//! Forward-pass inference: tensors, kernels, the weight-bundle format, the
//! two encoders and the cross-modal generator.

mod bundle;
pub mod container;
mod fixture;
pub mod ops;
mod tensor;

pub use bundle::{
    reparameterize, Activation, Architecture, Combiner, Encoder, EncoderSpec, Generator, GeneratorSpec,
    LayerSpec, WeightBundle, ENCODER_CHANNELS, GENERATOR_HIDDEN, LAYER_NORM_EPS, LEAKY_SLOPE,
    MANIFEST_TENSOR,
};
pub use fixture::coupled_bundle;
pub use tensor::{LatentVec, Tensor, LATENT_DIM};

use crate::dsp::{SpectrogramImage, SPECTROGRAM_SIZE};
use crate::raster::{TrajectoryImage, TRAJECTORY_CHANNELS, TRAJECTORY_SIZE};

/// `[224, 224, 1]` audio-encoder input.
pub fn spectrogram_tensor(image: &SpectrogramImage) -> Tensor {
    Tensor::new(vec![SPECTROGRAM_SIZE, SPECTROGRAM_SIZE, 1], image.as_slice().to_vec())
        .expect("spectrogram is 224x224")
}

/// `[256, 256, 3]` movement-encoder input scaled to [0, 1].
pub fn trajectory_tensor(image: &TrajectoryImage) -> Tensor {
    Tensor::new(
        vec![TRAJECTORY_SIZE, TRAJECTORY_SIZE, TRAJECTORY_CHANNELS],
        image.to_unit_floats(),
    )
    .expect("trajectory image is 256x256x3")
}
