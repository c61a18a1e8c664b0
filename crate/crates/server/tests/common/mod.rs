#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use kinetune_core::engine::{EngineConfig, OutputMode};
use kinetune_core::library::ClipLibrary;
use kinetune_core::neural::{coupled_bundle, WeightBundle};
use kinetune_core::synth::write_two_cluster_library;
use tempfile::TempDir;

/// A library directory, its weights file and a scratch directory.
pub struct Fixture {
    pub dir: TempDir,
    pub library: PathBuf,
    pub weights: PathBuf,
    pub bundle: Arc<WeightBundle>,
    pub lib: ClipLibrary,
}

impl Fixture {
    pub fn new(steady: usize, busy: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let library = dir.path().join("library");
        let weights = dir.path().join("weights.dmwb");
        let bundle = coupled_bundle();
        bundle.save(&weights).unwrap();
        write_two_cluster_library(&library, steady, busy, 11).unwrap();
        let lib = ClipLibrary::build(&library, &bundle).unwrap();
        Self {
            dir,
            library,
            weights,
            bundle: Arc::new(bundle),
            lib,
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Engine config pointing at this fixture, rendering live audio to `live.wav`.
    pub fn config(&self) -> EngineConfig {
        EngineConfig {
            seed: 5,
            library: self.library.clone(),
            weights: self.weights.clone(),
            output: OutputMode::Wav {
                path: self.path("live.wav"),
            },
            ..EngineConfig::default()
        }
    }
}
