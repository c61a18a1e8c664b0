mod common;

use std::path::Path;
use std::process::{Command, Output};

use kinetune_analysis::AnalysisReport;
use kinetune_core::engine::SessionLog;
use kinetune_core::neural::WeightBundle;
use kinetune_core::pose::write_replay;
use kinetune_core::synth::alternating_replay;
use kinetune_server::exit;

fn kinetune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinetune"))
        .args(args)
        .env_remove("ENGINE_PORT")
        .env_remove("ENGINE_LIBRARY")
        .env_remove("ENGINE_WEIGHTS")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(kinetune(&[]).status.code(), Some(exit::USAGE));
    assert_eq!(kinetune(&["frobnicate"]).status.code(), Some(exit::USAGE));
    // inspect wants exactly one target
    assert_eq!(kinetune(&["inspect"]).status.code(), Some(exit::USAGE));
    assert_eq!(
        kinetune(&["inspect", "--weights", "a", "--library", "b"]).status.code(),
        Some(exit::USAGE)
    );
    assert_eq!(kinetune(&["inspect", "--pose", "p.jsonl"]).status.code(), Some(exit::USAGE));
    assert_eq!(kinetune(&["--help"]).status.code(), Some(exit::OK));
}

#[test]
fn gen_random_weights_dry_runs_every_network() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("random.dmwb");
    let o = kinetune(&["inspect", "--gen-random-weights", s(&out), "--seed", "9"]);
    assert_eq!(o.status.code(), Some(exit::OK), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("224x224x1 -> 128"), "{text}");
    assert!(text.contains("256x256x3 -> 128"), "{text}");
    assert!(text.contains("(128, 128) -> 128"), "{text}");
    // same seed, same bytes as the library generator
    assert_eq!(std::fs::read(&out).unwrap(), WeightBundle::random(9).to_bytes());

    let o = kinetune(&["inspect", "--weights", s(&out)]);
    assert_eq!(o.status.code(), Some(exit::OK));

    let mut bytes = std::fs::read(&out).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    let bad = dir.path().join("bad.dmwb");
    std::fs::write(&bad, bytes).unwrap();
    let o = kinetune(&["inspect", "--weights", s(&bad)]);
    assert_eq!(o.status.code(), Some(exit::WEIGHTS), "{}", stderr(&o));
}

#[test]
fn build_db_reports_an_empty_library() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("w.dmwb");
    WeightBundle::random(1).save(&weights).unwrap();
    let empty = dir.path().join("clips");
    std::fs::create_dir(&empty).unwrap();
    let o = kinetune(&["build-db", "--library", s(&empty), "--weights", s(&weights)]);
    assert_eq!(o.status.code(), Some(exit::LIBRARY));
    assert!(stderr(&o).contains("empty"), "{}", stderr(&o));

    let o = kinetune(&["build-db", "--library", s(&empty), "--weights", s(&dir.path().join("missing.dmwb"))]);
    assert_eq!(o.status.code(), Some(exit::IO));
}

#[test]
fn build_db_then_inspect_library() {
    let fx = common::Fixture::new(2, 2);
    std::fs::remove_file(fx.library.join("library.json")).unwrap();
    let o = kinetune(&["build-db", "--library", s(&fx.library), "--weights", s(&fx.weights)]);
    assert_eq!(o.status.code(), Some(exit::OK), "{}", stderr(&o));
    assert!(stdout(&o).contains("4 clips"));
    let o = kinetune(&["inspect", "--library", s(&fx.library)]);
    assert_eq!(o.status.code(), Some(exit::OK));
    assert!(stdout(&o).contains("busy_001"));
}

#[test]
fn simulate_then_analyze() {
    let fx = common::Fixture::new(3, 3);
    let pose = fx.path("pose.jsonl");
    std::fs::write(&pose, write_replay(&alternating_replay(70.0, 10.0, 30.0, 2))).unwrap();
    let out = fx.path("run");
    let args = [
        "simulate",
        "--pose",
        s(&pose),
        "--library",
        s(&fx.library),
        "--weights",
        s(&fx.weights),
        "--out",
        s(&out),
    ];
    let o = kinetune(&args);
    assert_eq!(o.status.code(), Some(exit::OK), "{}", stderr(&o));
    let log = SessionLog::load(&out.join("session.log")).unwrap();
    assert_eq!(log.events.len(), 23);
    let schedule: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("schedule.json")).unwrap()).unwrap();
    assert_eq!(schedule.as_array().unwrap().len(), 23);

    // a second run is byte-identical
    let again = fx.path("again");
    let mut args2 = args;
    args2[8] = s(&again);
    assert_eq!(kinetune(&args2).status.code(), Some(exit::OK));
    for f in ["session.log", "render.wav", "schedule.json"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }

    let o = kinetune(&[
        "analyze",
        s(&out.join("session.log")),
        "--library",
        s(&fx.library),
        "--audio",
        s(&out.join("render.wav")),
    ]);
    assert_eq!(o.status.code(), Some(exit::OK), "{}", stderr(&o));
    let report = AnalysisReport::load(&out.join("report.json")).unwrap();
    assert_eq!(report.metadata.segments, 6);
    assert!(out.join("report.txt").exists());
}

#[test]
fn short_sessions_are_insufficient_data() {
    let fx = common::Fixture::new(2, 2);
    let pose = fx.path("pose.jsonl");
    std::fs::write(&pose, write_replay(&alternating_replay(30.0, 10.0, 30.0, 2))).unwrap();
    let out = fx.path("run");
    let o = kinetune(&[
        "simulate",
        "--pose",
        s(&pose),
        "--library",
        s(&fx.library),
        "--weights",
        s(&fx.weights),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(exit::OK));
    let o = kinetune(&[
        "analyze",
        s(&out.join("session.log")),
        "--library",
        s(&fx.library),
        "--audio",
        s(&out.join("render.wav")),
    ]);
    assert_eq!(o.status.code(), Some(exit::INSUFFICIENT_DATA), "{}", stderr(&o));

    // one frame cannot fill a window either
    std::fs::write(&pose, "{\"t\":0,\"pts\":[[0,0],[0,0],[0,0],[0,0],[0,0]]}\n").unwrap();
    let o = kinetune(&["simulate", "--pose", s(&pose), "--library", s(&fx.library), "--weights", s(&fx.weights), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(exit::INSUFFICIENT_DATA));

    std::fs::write(&pose, "not json\n").unwrap();
    let o = kinetune(&["simulate", "--pose", s(&pose), "--library", s(&fx.library), "--weights", s(&fx.weights), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(exit::INVALID_INPUT));
}

#[test]
fn inspect_writes_pngs() {
    let fx = common::Fixture::new(1, 1);
    let pose = fx.path("pose.jsonl");
    std::fs::write(&pose, write_replay(&alternating_replay(10.0, 5.0, 30.0, 2))).unwrap();
    let png = fx.path("window.png");
    let o = kinetune(&["inspect", "--pose", s(&pose), "--png", s(&png), "--window-start-ms", "3000"]);
    assert_eq!(o.status.code(), Some(exit::OK), "{}", stderr(&o));
    assert_eq!(&std::fs::read(&png).unwrap()[1..4], b"PNG");

    let spec = fx.path("spec.png");
    let wav = fx.library.join("busy_000.wav");
    let o = kinetune(&["inspect", "--audio", s(&wav), "--png", s(&spec)]);
    assert_eq!(o.status.code(), Some(exit::OK), "{}", stderr(&o));
    assert_eq!(&std::fs::read(&spec).unwrap()[1..4], b"PNG");
}

#[test]
fn serve_reports_a_taken_port() {
    let fx = common::Fixture::new(1, 1);
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let o = Command::new(env!("CARGO_BIN_EXE_kinetune"))
        .args(["serve", "--host", "127.0.0.1"])
        .env("ENGINE_PORT", &port)
        .env("ENGINE_LIBRARY", &fx.library)
        .env("ENGINE_WEIGHTS", &fx.weights)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(exit::NETWORK), "{}", stderr(&o));
}
