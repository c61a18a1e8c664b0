//! Core of the kinetune movement-to-music engine: pose ingestion, trajectory
//! rasters, audio analysis, the neural forward pass, the clip library,
//! latent retrieval and the realtime performance loop.

pub mod dsp;
pub mod engine;
pub mod error;
pub mod fsutil;
pub mod library;
pub mod neural;
pub mod pose;
pub mod raster;
pub mod retrieval;
pub mod synth;

pub use error::{Error, FormatError, Result};
