#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use kinetune_core::library::ClipLibrary;
use kinetune_core::neural::{coupled_bundle, WeightBundle};
use kinetune_core::synth::write_two_cluster_library;

/// Two-cluster library built with the coupled bundle.
pub fn coupled_library(dir: &Path, steady: usize, busy: usize) -> (Arc<WeightBundle>, Arc<ClipLibrary>) {
    let bundle = coupled_bundle();
    write_two_cluster_library(dir, steady, busy, 11).unwrap();
    let lib = ClipLibrary::build(dir, &bundle).unwrap();
    (Arc::new(bundle), Arc::new(lib))
}
