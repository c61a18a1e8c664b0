mod common;

use std::sync::Arc;

use kinetune_core::dsp::{write_wav, SAMPLE_RATE};
use kinetune_core::engine::{Engine, EngineConfig};
use kinetune_core::library::{encode_clip, ClipLibrary, LATENTS_FILE, MANIFEST_FILE};
use kinetune_core::neural::{coupled_bundle, WeightBundle, LATENT_DIM};
use kinetune_core::retrieval::LatentIndex;
use kinetune_core::synth::{burst_clip, steady_clip, write_two_cluster_library};
use kinetune_core::Error;

#[test]
fn three_clips_three_entries() {
    let dir = tempfile::tempdir().unwrap();
    let (_, lib) = common::coupled_library(dir.path(), 2, 1);
    assert_eq!(lib.len(), 3);
    for c in lib.clips() {
        assert_eq!(c.latent.as_slice().len(), LATENT_DIM);
        assert!((c.duration_s - 3.5).abs() < 1e-9);
    }
    let ids: Vec<_> = lib.clips().iter().map(|c| c.id.as_str()).collect();
    assert_eq!(ids, ["busy_000", "steady_000", "steady_001"]);
}

#[test]
fn id_collision_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    write_wav(&dir.path().join("Kick.wav"), steady_clip(1).samples(), SAMPLE_RATE).unwrap();
    write_wav(&dir.path().join("kick.wav"), steady_clip(2).samples(), SAMPLE_RATE).unwrap();
    assert!(matches!(ClipLibrary::build(dir.path(), &coupled_bundle()), Err(Error::DuplicateId(id)) if id == "kick"));
}

#[test]
fn rebuild_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    common::coupled_library(dir.path(), 2, 2);
    let sidecar = std::fs::read(dir.path().join(LATENTS_FILE)).unwrap();
    let manifest = std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
    ClipLibrary::build(dir.path(), &coupled_bundle()).unwrap();
    assert_eq!(sidecar, std::fs::read(dir.path().join(LATENTS_FILE)).unwrap());
    assert_eq!(manifest, std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap());
}

#[test]
fn bad_files_are_skipped_and_empty_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("broken.wav"), b"not a wav").unwrap();
    write_wav(&dir.path().join("short.wav"), &vec![0.1; 1000], SAMPLE_RATE).unwrap();
    assert!(matches!(ClipLibrary::build(dir.path(), &coupled_bundle()), Err(Error::EmptyLibrary)));

    // a longer clip is center-cropped
    let mut long = steady_clip(3).into_samples();
    long.extend(steady_clip(4).into_samples());
    write_wav(&dir.path().join("long.wav"), &long, SAMPLE_RATE).unwrap();
    let lib = ClipLibrary::build(dir.path(), &coupled_bundle()).unwrap();
    assert_eq!(lib.len(), 1);
    assert_eq!(lib.load_audio(&lib.clips()[0]).unwrap().len(), 77175);
}

#[test]
fn sidecar_equals_reencoding_and_reload_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, lib) = common::coupled_library(dir.path(), 2, 2);
    let loaded = ClipLibrary::load(dir.path()).unwrap();
    for c in loaded.clips() {
        let fresh = encode_clip(&bundle, &loaded.load_audio(c).unwrap()).unwrap();
        assert_eq!(fresh, c.latent);
    }
    assert_eq!(loaded.manifest(), lib.manifest());
    let before = (std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap(), loaded.latents_bytes());
    loaded.save().unwrap();
    assert_eq!(before.0, std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap());
    assert_eq!(before.1, std::fs::read(dir.path().join(LATENTS_FILE)).unwrap());
}

#[test]
fn tampered_audio_fails_integrity() {
    let dir = tempfile::tempdir().unwrap();
    common::coupled_library(dir.path(), 1, 1);
    write_wav(&dir.path().join("busy_000.wav"), burst_clip(99).samples(), SAMPLE_RATE).unwrap();
    assert!(matches!(ClipLibrary::load(dir.path()), Err(Error::Integrity(_))));
}

#[test]
fn other_weights_trigger_rebuild() {
    let dir = tempfile::tempdir().unwrap();
    common::coupled_library(dir.path(), 1, 1);
    let random = WeightBundle::random(3);
    let lib = ClipLibrary::load_for(dir.path(), &random).unwrap();
    assert_eq!(lib.weights_hash(), random.content_hash());
    let c = &lib.clips()[0];
    assert_eq!(c.latent, encode_clip(&random, &lib.load_audio(c).unwrap()).unwrap());
    assert_eq!(ClipLibrary::load(dir.path()).unwrap().weights_hash(), random.content_hash());
}

#[test]
fn add_then_remove_restores_manifest() {
    let lib_dir = tempfile::tempdir().unwrap();
    let (bundle, lib) = common::coupled_library(lib_dir.path(), 2, 1);
    let mut lib = (*lib).clone();
    let original = lib.manifest().clone();

    let src = tempfile::tempdir().unwrap();
    let extra = src.path().join("Extra Hit.wav");
    write_wav(&extra, burst_clip(42).samples(), SAMPLE_RATE).unwrap();
    let added = lib.add_clip(&extra, vec!["perc".into()], -3.0, &bundle).unwrap();
    assert_eq!(added.id, "extra_hit");
    assert!(lib_dir.path().join("Extra Hit.wav").exists());
    assert!(matches!(lib.add_clip(&extra, vec![], 0.0, &bundle), Err(Error::DuplicateId(_))));
    assert_eq!(ClipLibrary::load(lib_dir.path()).unwrap().len(), 4);

    lib.remove_clip("extra_hit").unwrap();
    assert_eq!(lib.manifest(), &original);
    assert!(matches!(lib.remove_clip("nope"), Err(Error::UnknownId(_))));
}

#[test]
fn removed_clip_is_never_retrieved() {
    let dir = tempfile::tempdir().unwrap();
    let (_, lib) = common::coupled_library(dir.path(), 2, 2);
    let mut lib = (*lib).clone();
    let gone = lib.clips()[0].clone();
    lib.remove_clip(&gone.id).unwrap();
    let index = LatentIndex::new(lib.clips()).unwrap();
    assert_ne!(index.retrieve(&gone.latent).unwrap().id, gone.id);
    assert!(!index.contains(&gone.id));
}

#[test]
fn removing_last_clip_blocks_engine_start() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, lib) = common::coupled_library(dir.path(), 1, 0);
    let mut lib = (*lib).clone();
    lib.remove_clip("steady_000").unwrap();
    let reloaded = ClipLibrary::load(dir.path()).unwrap();
    assert!(reloaded.is_empty());
    let err = Engine::new(EngineConfig::default(), bundle, Arc::new(reloaded)).unwrap_err();
    assert!(matches!(err, Error::EmptyLibrary));
}

#[test]
fn two_cluster_writer_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_two_cluster_library(a.path(), 1, 1, 5).unwrap();
    write_two_cluster_library(b.path(), 1, 1, 5).unwrap();
    for name in ["steady_000.wav", "busy_000.wav"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
    }
}
