mod common;

use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use futures::{SinkExt, StreamExt};
use http_body_util::BodyExt;
use kinetune_core::dsp::{write_wav, SAMPLE_RATE};
use kinetune_core::pose::{write_replay, PoseFrame};
use kinetune_core::synth::{alternating_replay, steady_clip};
use kinetune_server::{router, serve, AppState, LiveOptions, ServeOptions, TelemetryEvent};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};
use tower::ServiceExt;

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

fn state(fx: &common::Fixture, capacity: usize) -> AppState {
    AppState::new(
        fx.config(),
        fx.bundle.clone(),
        fx.lib.clone(),
        ServeOptions {
            live: LiveOptions { time_scale: 10.0 },
            telemetry_capacity: capacity,
            session_dir: Some(fx.path("sessions")),
        },
    )
    .unwrap()
}

async fn call(st: &AppState, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(st.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

/// Serve `st` on an ephemeral port; returns the base address.
async fn listen(st: &AppState) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, st.clone(), std::future::pending()));
    format!("ws://{addr}")
}

async fn ws(base: &str, path: &str) -> Ws {
    tokio_tungstenite::connect_async(format!("{base}{path}")).await.unwrap().0
}

async fn send_frames(ws: &mut Ws, frames: &[PoseFrame]) {
    for f in frames {
        ws.send(Message::text(serde_json::to_string(f).unwrap())).await.unwrap();
    }
}

async fn next_event(ws: &mut Ws) -> TelemetryEvent {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(60), ws.next())
            .await
            .expect("telemetry within a minute")
            .unwrap()
            .unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(t.as_str()).unwrap();
        }
    }
}

/// Decisions a replay yields at the default 3.0 s cadence.
fn expected_steps(replay: &[PoseFrame]) -> u64 {
    let span = (replay.last().unwrap().timestamp_ms - replay[0].timestamp_ms) as f64;
    ((span + 0.5 - 3500.0) / 3000.0).floor() as u64 + 1
}

async fn wait_for_steps(st: &AppState, steps: u64) {
    for _ in 0..600 {
        let (_, body) = call(st, Method::GET, "/api/status", None).await;
        if body["progress"]["steps"].as_u64() == Some(steps) {
            return;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    panic!("session never reached {steps} steps");
}

/// Frames up to (and including) the first at or past `until_ms`.
fn frames_until(replay: &[PoseFrame], from: usize, until_ms: i64) -> usize {
    from + replay[from..].iter().take_while(|f| f.timestamp_ms < until_ms).count() + 1
}

#[tokio::test]
async fn idle_status_and_session_conflicts() {
    let fx = common::Fixture::new(2, 2);
    let st = state(&fx, 16);
    let (code, body) = call(&st, Method::GET, "/api/status", None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(body, json!({ "state": "idle", "library_clips": 4 }));

    let (code, _) = call(&st, Method::POST, "/api/session/stop", None).await;
    assert_eq!(code, StatusCode::CONFLICT);

    let (code, _) = call(&st, Method::POST, "/api/session/start", None).await;
    assert_eq!(code, StatusCode::OK);
    let (code, body) = call(&st, Method::POST, "/api/session/start", None).await;
    assert_eq!(code, StatusCode::CONFLICT);
    assert!(body["error"].as_str().unwrap().contains("already running"));
    let (_, body) = call(&st, Method::GET, "/api/status", None).await;
    assert_eq!(body["state"], "running");

    // structural fields are frozen while running
    let (code, _) = call(&st, Method::PUT, "/api/config", Some(json!({ "fps": 60.0 }))).await;
    assert_eq!(code, StatusCode::CONFLICT);

    let (code, body) = call(&st, Method::POST, "/api/session/stop", None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(body["steps"], 0);
    let (_, body) = call(&st, Method::GET, "/api/status", None).await;
    assert_eq!(body["state"], "idle");
}

#[tokio::test]
async fn config_patches_are_validated() {
    let fx = common::Fixture::new(1, 1);
    let st = state(&fx, 16);
    let (code, body) = call(&st, Method::PUT, "/api/config", Some(json!({ "crossfade_ms": 700.0 }))).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(body["crossfade_ms"], 700.0);
    let (_, body) = call(&st, Method::GET, "/api/config", None).await;
    assert_eq!(body["crossfade_ms"], 700.0);

    for bad in [json!({ "crossfade_ms": 4000.0 }), json!({ "clip_s": 2.0 }), json!({ "nope": 1 }), json!([1])] {
        let (code, body) = call(&st, Method::PUT, "/api/config", Some(bad.clone())).await;
        assert_eq!(code, StatusCode::BAD_REQUEST, "{bad}");
        assert!(body["error"].is_string());
    }
}

#[tokio::test]
async fn library_edits() {
    let fx = common::Fixture::new(2, 1);
    let st = state(&fx, 16);
    let (_, body) = call(&st, Method::GET, "/api/library", None).await;
    assert_eq!(body["clips"].as_array().unwrap().len(), 3);
    assert_eq!(body["weights_hash"], fx.bundle.content_hash());

    let extra = fx.path("extra_tone.wav");
    write_wav(&extra, steady_clip(77).samples(), SAMPLE_RATE).unwrap();
    let add = json!({ "path": extra, "tags": ["calm"], "gain_db": -3.0 });
    let (code, body) = call(&st, Method::POST, "/api/library/add", Some(add.clone())).await;
    assert_eq!(code, StatusCode::CREATED);
    assert_eq!(body["id"], "extra_tone");
    let (code, _) = call(&st, Method::POST, "/api/library/add", Some(add)).await;
    assert_eq!(code, StatusCode::CONFLICT);

    let (code, _) = call(&st, Method::DELETE, "/api/library/no_such_clip", None).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    let (code, body) = call(&st, Method::DELETE, "/api/library/extra_tone", None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(body["removed"], "extra_tone");
    let (_, body) = call(&st, Method::GET, "/api/status", None).await;
    assert_eq!(body["library_clips"], 3);
    // edits are persisted to the manifest
    let on_disk = kinetune_core::library::ClipLibrary::load(&fx.library).unwrap();
    assert_eq!(on_disk.len(), 3);

    for id in ["busy_000", "steady_000"] {
        let (code, _) = call(&st, Method::DELETE, &format!("/api/library/{id}"), None).await;
        assert_eq!(code, StatusCode::OK);
    }
    let (code, body) = call(&st, Method::DELETE, "/api/library/steady_001", None).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("last clip"));
}

#[tokio::test]
async fn simulate_matches_offline_engine() {
    let fx = common::Fixture::new(3, 3);
    let st = state(&fx, 16);
    let replay = alternating_replay(70.0, 10.0, 30.0, 2);
    let out = fx.path("sim");
    let req = json!({ "pose_jsonl": write_replay(&replay), "out": out });
    let (code, body) = call(&st, Method::POST, "/api/simulate", Some(req)).await;
    assert_eq!(code, StatusCode::OK, "{body}");
    assert_eq!(body["steps"], 23);
    assert_eq!(body["audio_samples"], 22 * 66150 + 77175);
    assert_eq!(body["schedule"].as_array().unwrap().len(), 23);

    let offline = kinetune_core::engine::run_offline(
        &replay,
        &fx.config(),
        fx.bundle.clone(),
        std::sync::Arc::new(fx.lib.clone()),
    )
    .unwrap();
    assert_eq!(body["log"].as_str().unwrap(), offline.log.to_jsonl());
    assert!(out.join("session.log").exists() && out.join("render.wav").exists());

    let (code, _) = call(&st, Method::POST, "/api/simulate", Some(json!({ "pose_jsonl": "{not json" }))).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn pose_socket_reports_bad_frames_and_idle_state() {
    let fx = common::Fixture::new(1, 1);
    let st = state(&fx, 16);
    let base = listen(&st).await;
    let mut pose = ws(&base, "/ws/pose").await;

    pose.send(Message::text("{\"t\": 0}")).await.unwrap();
    let reply = pose.next().await.unwrap().unwrap().into_text().unwrap();
    assert!(reply.contains("bad frame"), "{reply}");

    let frame = PoseFrame::new(0, [[0.0, 0.0]; 5]);
    pose.send(Message::text(serde_json::to_string(&frame).unwrap())).await.unwrap();
    let reply = pose.next().await.unwrap().unwrap().into_text().unwrap();
    assert!(reply.contains("no session"), "{reply}");

    let off_screen = PoseFrame::new(0, [[2.0, 0.0]; 5]);
    pose.send(Message::text(serde_json::to_string(&off_screen).unwrap())).await.unwrap();
    let reply = pose.next().await.unwrap().unwrap().into_text().unwrap();
    assert!(reply.contains("outside"), "{reply}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn crossfade_change_reaches_the_next_transition() {
    let fx = common::Fixture::new(3, 3);
    let st = state(&fx, 64);
    let base = listen(&st).await;
    let mut telemetry = ws(&base, "/ws/telemetry").await;
    let mut pose = ws(&base, "/ws/pose").await;
    let (code, _) = call(&st, Method::POST, "/api/session/start", None).await;
    assert_eq!(code, StatusCode::OK);

    let replay = alternating_replay(40.0, 10.0, 30.0, 6);
    // three decisions at 3.5, 6.5 and 9.5 s
    let cut = frames_until(&replay, 0, 9500);
    send_frames(&mut pose, &replay[..cut]).await;
    for step in 0..3 {
        let ev = next_event(&mut telemetry).await;
        assert_eq!(ev.step, step);
        assert_eq!(ev.crossfade.crossfade_ms, 500.0);
        assert_eq!(ev.crossfade.samples, 11025);
        assert_eq!(ev.schema_version, 1);
        assert_eq!(ev.top5.len(), 5);
    }

    let (code, body) = call(&st, Method::PUT, "/api/config", Some(json!({ "crossfade_ms": 800.0 }))).await;
    assert_eq!(code, StatusCode::OK, "{body}");
    send_frames(&mut pose, &replay[cut..]).await;
    let ev = next_event(&mut telemetry).await;
    assert_eq!(ev.step, 3);
    assert_eq!(ev.crossfade.crossfade_ms, 800.0);
    assert_eq!(ev.crossfade.samples, 17640);
    // the cadence follows: 2.7 s between decisions from here on
    let after = next_event(&mut telemetry).await;
    assert!((after.t_ms - ev.t_ms - 2700.0).abs() < 1e-9, "{} -> {}", ev.t_ms, after.t_ms);

    let (code, body) = call(&st, Method::POST, "/api/session/stop", None).await;
    assert_eq!(code, StatusCode::OK);
    assert!(body["steps"].as_u64().unwrap() >= 5);
    assert!(fx.path("sessions/session.log").exists());
    assert!(fx.path("live.wav").exists());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn removed_clip_leaves_subsequent_top5() {
    let fx = common::Fixture::new(4, 4);
    let st = state(&fx, 64);
    let base = listen(&st).await;
    let mut telemetry = ws(&base, "/ws/telemetry").await;
    let mut pose = ws(&base, "/ws/pose").await;
    call(&st, Method::POST, "/api/session/start", None).await;

    let replay = alternating_replay(40.0, 10.0, 30.0, 7);
    let cut = frames_until(&replay, 0, 6500);
    send_frames(&mut pose, &replay[..cut]).await;
    next_event(&mut telemetry).await;
    let second = next_event(&mut telemetry).await;
    let victim = second.top5[0].id.clone();

    let (code, _) = call(&st, Method::DELETE, &format!("/api/library/{victim}"), None).await;
    assert_eq!(code, StatusCode::OK);
    send_frames(&mut pose, &replay[cut..]).await;
    let mut seen = 0;
    while seen < expected_steps(&replay) - 2 {
        let ev = next_event(&mut telemetry).await;
        assert!(ev.top5.iter().all(|s| s.id != victim), "step {} still offers {victim}", ev.step);
        assert_ne!(ev.clip_id, victim);
        seen += 1;
    }
    let (code, _) = call(&st, Method::POST, "/api/session/stop", None).await;
    assert_eq!(code, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn slow_telemetry_reader_is_told_about_the_gap() {
    let fx = common::Fixture::new(2, 2);
    let st = state(&fx, 4);
    let mut sub = st.telemetry().subscribe();
    let base = listen(&st).await;
    let mut pose = ws(&base, "/ws/pose").await;
    call(&st, Method::POST, "/api/session/start", None).await;
    let replay = alternating_replay(40.0, 10.0, 30.0, 3);
    send_frames(&mut pose, &replay).await;
    let steps = expected_steps(&replay);
    wait_for_steps(&st, steps).await;
    let (_, body) = call(&st, Method::POST, "/api/session/stop", None).await;
    assert_eq!(body["steps"].as_u64().unwrap(), steps);

    let first = sub.next().await.unwrap();
    assert!(first.gap);
    assert_eq!(first.dropped, steps - 4);
    assert_eq!(first.step, steps - 4);
    let second = sub.next().await.unwrap();
    assert!(!second.gap);
    assert_eq!(second.step, steps - 3);
}
