mod common;

use std::sync::Arc;

use kinetune_core::dsp::read_wav;
use kinetune_core::engine::run_offline;
use kinetune_core::synth::alternating_replay;
use kinetune_server::{EngineCommand, LiveOptions, LiveSession, Telemetry};

#[test]
fn live_loopback_renders_the_offline_schedule() {
    let fx = common::Fixture::new(3, 3);
    let cfg = fx.config();
    let replay = alternating_replay(40.0, 10.0, 30.0, 4);
    let offline = run_offline(&replay, &cfg, fx.bundle.clone(), Arc::new(fx.lib.clone())).unwrap();

    let session = LiveSession::start(
        cfg.clone(),
        fx.bundle.clone(),
        Arc::new(fx.lib.clone()),
        Telemetry::new(64),
        LiveOptions { time_scale: 10.0 },
        Some(fx.path("sessions")),
    )
    .unwrap();
    let tx = session.commands();
    for f in &replay {
        tx.send(EngineCommand::Frame(f.clone())).unwrap();
    }
    let (log, summary) = session.stop().unwrap();

    let live_ids: Vec<&str> = log.events.iter().map(|e| e.clip_id.as_str()).collect();
    let offline_ids: Vec<&str> = offline.log.events.iter().map(|e| e.clip_id.as_str()).collect();
    assert_eq!(live_ids, offline_ids);
    assert!(log.events.iter().all(|e| e.fault.is_none()), "a live step faulted");
    for (l, o) in log.events.iter().zip(&offline.log.events) {
        assert_eq!(l.t_ms, o.t_ms);
        assert_eq!(l.top5, o.top5);
    }
    assert_eq!(log.header.render_offset_ms, offline.log.header.render_offset_ms);
    assert_eq!(summary.audio_underruns, 0);
    assert_eq!(summary.samples, offline.audio.len());

    let live = read_wav(&fx.path("live.wav")).unwrap();
    assert_eq!(live.samples(), offline.audio.as_slice());
    assert!(fx.path("sessions/session.log").exists());
}

#[test]
fn stopping_before_any_decision_writes_an_empty_render() {
    let fx = common::Fixture::new(1, 1);
    let session = LiveSession::start(
        fx.config(),
        fx.bundle.clone(),
        Arc::new(fx.lib.clone()),
        Telemetry::new(8),
        LiveOptions::default(),
        None,
    )
    .unwrap();
    let (log, summary) = session.stop().unwrap();
    assert!(log.events.is_empty());
    assert_eq!(summary.samples, 0);
    assert_eq!(read_wav(&fx.path("live.wav")).map(|c| c.samples().len()).unwrap_or(0), 0);
}

#[test]
fn nonpositive_time_scale_is_rejected() {
    let fx = common::Fixture::new(1, 1);
    let err = LiveSession::start(
        fx.config(),
        fx.bundle.clone(),
        Arc::new(fx.lib.clone()),
        Telemetry::new(8),
        LiveOptions { time_scale: 0.0 },
        None,
    );
    assert!(err.is_err());
}
