//! HTTP and WebSocket control plane.

use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use kinetune_core::dsp::{write_wav, SAMPLE_RATE};
use kinetune_core::engine::{run_offline, EngineConfig, ScheduledClip};
use kinetune_core::library::ClipLibrary;
use kinetune_core::neural::WeightBundle;
use kinetune_core::pose::{parse_replay, PoseFrame};
use kinetune_core::Error as CoreError;
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;

use crate::error::ServerError;
use crate::live::{EngineCommand, LiveOptions, LiveSession, StopSummary};
use crate::telemetry::Telemetry;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub live: LiveOptions,
    pub telemetry_capacity: usize,
    /// Where live session logs are written on stop.
    pub session_dir: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            live: LiveOptions::default(),
            telemetry_capacity: 256,
            session_dir: None,
        }
    }
}

struct Shared {
    config: Mutex<EngineConfig>,
    bundle: Arc<WeightBundle>,
    library: RwLock<Arc<ClipLibrary>>,
    session: tokio::sync::Mutex<Option<LiveSession>>,
    telemetry: Telemetry,
    opts: ServeOptions,
}

#[derive(Clone)]
pub struct AppState {
    shared: Arc<Shared>,
}

impl AppState {
    pub fn new(config: EngineConfig, bundle: Arc<WeightBundle>, library: ClipLibrary, opts: ServeOptions) -> Result<Self, ServerError> {
        config.validate()?;
        if library.is_empty() {
            return Err(CoreError::EmptyLibrary.into());
        }
        Ok(Self {
            shared: Arc::new(Shared {
                config: Mutex::new(config),
                bundle,
                library: RwLock::new(Arc::new(library)),
                session: tokio::sync::Mutex::new(None),
                telemetry: Telemetry::new(opts.telemetry_capacity),
                opts,
            }),
        })
    }

    pub fn telemetry(&self) -> &Telemetry {
        &self.shared.telemetry
    }

    fn library(&self) -> Arc<ClipLibrary> {
        self.shared.library.read().expect("library lock").clone()
    }

    fn config(&self) -> EngineConfig {
        self.shared.config.lock().expect("config lock").clone()
    }
}

/// JSON error body with a status derived from the error class.
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<ServerError> for ApiError {
    fn from(e: ServerError) -> Self {
        let status = match &e {
            ServerError::Core(c) => match c {
                CoreError::UnknownId(_) => StatusCode::NOT_FOUND,
                CoreError::DuplicateId(_) => StatusCode::CONFLICT,
                CoreError::Io { .. } | CoreError::Wav(_) => StatusCode::INTERNAL_SERVER_ERROR,
                _ => StatusCode::BAD_REQUEST,
            },
            ServerError::Conflict(_) => StatusCode::CONFLICT,
            ServerError::Usage(_) | ServerError::Json(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        ServerError::from(e).into()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServerError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/status", get(status))
        .route("/api/session/start", post(start_session))
        .route("/api/session/stop", post(stop_session))
        .route("/api/config", get(get_config).put(put_config))
        .route("/api/library", get(get_library))
        .route("/api/library/add", post(add_clip))
        .route("/api/library/{id}", delete(remove_clip))
        .route("/api/simulate", post(simulate))
        .route("/ws/pose", get(pose_ws))
        .route("/ws/telemetry", get(telemetry_ws))
        .with_state(state)
}

/// Serve until `shutdown` resolves; a running session is stopped first.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServerError> {
    let addr = listener.local_addr().map_err(|e| ServerError::Internal(e.to_string()))?;
    info!("listening on {addr}");
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| ServerError::Internal(e.to_string()))?;
    if let Some(session) = state.shared.session.lock().await.take() {
        tokio::task::spawn_blocking(move || session.stop())
            .await
            .map_err(|e| ServerError::Internal(e.to_string()))??;
    }
    Ok(())
}

async fn status(State(st): State<AppState>) -> Json<Value> {
    let clips = st.library().len();
    match st.shared.session.lock().await.as_ref() {
        None => Json(json!({ "state": "idle", "library_clips": clips })),
        Some(s) => Json(json!({ "state": "running", "library_clips": clips, "progress": s.progress() })),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StartRequest {
    /// Overrides merged onto the current config for this session.
    #[serde(default)]
    config: Option<Value>,
}

fn merged_config(base: &EngineConfig, patch: &Value) -> Result<EngineConfig, ServerError> {
    let Value::Object(patch) = patch else {
        return Err(ServerError::Usage("config patch must be a JSON object".into()));
    };
    let mut v = serde_json::to_value(base)?;
    let obj = v.as_object_mut().expect("config serializes to an object");
    for (k, val) in patch {
        if !obj.contains_key(k) {
            return Err(ServerError::Usage(format!("unknown config field `{k}`")));
        }
        obj.insert(k.clone(), val.clone());
    }
    let cfg: EngineConfig = serde_json::from_value(v).map_err(|e| ServerError::Usage(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

async fn start_session(State(st): State<AppState>, body: Option<Json<StartRequest>>) -> ApiResult<Json<Value>> {
    let mut guard = st.shared.session.lock().await;
    if guard.is_some() {
        return Err(ServerError::Conflict("a session is already running".into()).into());
    }
    let req = body.map(|b| b.0).unwrap_or_default();
    let config = match &req.config {
        Some(patch) => merged_config(&st.config(), patch)?,
        None => st.config(),
    };
    let session = LiveSession::start(
        config.clone(),
        st.shared.bundle.clone(),
        st.library(),
        st.shared.telemetry.clone(),
        st.shared.opts.live,
        st.shared.opts.session_dir.clone(),
    )?;
    *st.shared.config.lock().expect("config lock") = config;
    *guard = Some(session);
    Ok(Json(json!({ "state": "running" })))
}

async fn stop_session(State(st): State<AppState>) -> ApiResult<Json<StopSummary>> {
    let session = st
        .shared
        .session
        .lock()
        .await
        .take()
        .ok_or_else(|| ServerError::Conflict("no session is running".into()))?;
    let (_, summary) = blocking(move || session.stop()).await?;
    Ok(Json(summary))
}

async fn get_config(State(st): State<AppState>) -> Json<EngineConfig> {
    Json(st.config())
}

const TUNABLE: [&str; 2] = ["crossfade_ms", "smoothing_tau_s"];

async fn put_config(State(st): State<AppState>, Json(patch): Json<Value>) -> ApiResult<Json<EngineConfig>> {
    let session = st.shared.session.lock().await;
    let current = st.config();
    let next = merged_config(&current, &patch)?;
    if let Some(s) = session.as_ref() {
        let before = serde_json::to_value(&current).map_err(ServerError::from)?;
        let after = serde_json::to_value(&next).map_err(ServerError::from)?;
        let fixed: Vec<&String> = after
            .as_object()
            .expect("config serializes to an object")
            .iter()
            .filter(|(k, v)| !TUNABLE.contains(&k.as_str()) && before.get(k.as_str()) != Some(*v))
            .map(|(k, _)| k)
            .collect();
        if !fixed.is_empty() {
            return Err(ServerError::Conflict(format!("{fixed:?} cannot change during a session")).into());
        }
        s.commands()
            .send(EngineCommand::Tune {
                crossfade_ms: next.crossfade_ms,
                smoothing_tau_s: next.smoothing_tau_s,
            })
            .map_err(|_| ServerError::Internal("engine thread is gone".into()))?;
    }
    *st.shared.config.lock().expect("config lock") = next.clone();
    Ok(Json(next))
}

async fn get_library(State(st): State<AppState>) -> Json<Value> {
    let lib = st.library();
    Json(json!({
        "weights_hash": lib.weights_hash(),
        "content_hash": lib.content_hash(),
        "clips": lib.clips(),
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AddRequest {
    path: PathBuf,
    #[serde(default)]
    tags: Vec<String>,
    #[serde(default)]
    gain_db: f64,
}

/// Apply an edit to a copy of the library, then publish it to the service
/// and to the running session, if any.
async fn edit_library<T: Send + 'static>(
    st: &AppState,
    edit: impl FnOnce(&mut ClipLibrary, &WeightBundle) -> Result<T, CoreError> + Send + 'static,
) -> ApiResult<T> {
    let session = st.shared.session.lock().await;
    let mut lib = (*st.library()).clone();
    let bundle = st.shared.bundle.clone();
    let (lib, out) = blocking(move || {
        let out = edit(&mut lib, &bundle)?;
        Ok((Arc::new(lib), out))
    })
    .await?;
    if let Some(s) = session.as_ref() {
        let _ = s.commands().send(EngineCommand::Library(lib.clone()));
    }
    *st.shared.library.write().expect("library lock") = lib;
    Ok(out)
}

async fn add_clip(State(st): State<AppState>, Json(req): Json<AddRequest>) -> ApiResult<(StatusCode, Json<Value>)> {
    let entry = edit_library(&st, move |lib, bundle| lib.add_clip(&req.path, req.tags, req.gain_db, bundle)).await?;
    Ok((StatusCode::CREATED, Json(json!(entry))))
}

async fn remove_clip(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let entry = edit_library(&st, move |lib, _| {
        if lib.len() == 1 {
            return Err(CoreError::InvalidArgument("cannot remove the last clip".into()));
        }
        lib.remove_clip(&id)
    })
    .await?;
    Ok(Json(json!({ "removed": entry.id })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateRequest {
    /// Pose replay in the JSON Lines frame format.
    pose_jsonl: String,
    #[serde(default)]
    config: Option<Value>,
    /// Directory to write `session.log` and `render.wav` into.
    #[serde(default)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct SimulateResponse {
    steps: usize,
    schedule: Vec<ScheduledClip>,
    audio_samples: usize,
    log: String,
}

async fn simulate(State(st): State<AppState>, Json(req): Json<SimulateRequest>) -> ApiResult<Json<SimulateResponse>> {
    let config = match &req.config {
        Some(patch) => merged_config(&st.config(), patch)?,
        None => st.config(),
    };
    let bundle = st.shared.bundle.clone();
    let library = st.library();
    let resp = blocking(move || {
        let frames = parse_replay(&req.pose_jsonl)?;
        let run = run_offline(&frames, &config, bundle, library)?;
        if let Some(dir) = &req.out {
            std::fs::create_dir_all(dir).map_err(|e| ServerError::io(dir, e))?;
            run.log.save(&dir.join("session.log"))?;
            write_wav(&dir.join("render.wav"), &run.audio, SAMPLE_RATE)?;
        }
        Ok(SimulateResponse {
            steps: run.log.events.len(),
            schedule: run.schedule,
            audio_samples: run.audio.len(),
            log: run.log.to_jsonl(),
        })
    })
    .await?;
    Ok(Json(resp))
}

async fn pose_ws(State(st): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| pose_socket(st, socket))
}

async fn pose_socket(st: AppState, socket: WebSocket) {
    let (mut tx, mut rx) = socket.split();
    while let Some(Ok(msg)) = rx.next().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let reply = match serde_json::from_str::<PoseFrame>(text.as_str()) {
            Err(e) => Some(json!({ "error": format!("bad frame: {e}") })),
            Ok(frame) => match frame.validate() {
                Err(e) => Some(json!({ "error": e.to_string() })),
                Ok(()) => {
                    let sender = st.shared.session.lock().await.as_ref().map(LiveSession::commands);
                    match sender {
                        Some(s) if s.send(EngineCommand::Frame(frame)).is_ok() => None,
                        _ => Some(json!({ "error": "no session is running" })),
                    }
                }
            },
        };
        if let Some(r) = reply {
            if tx.send(Message::Text(r.to_string().into())).await.is_err() {
                break;
            }
        }
    }
}

async fn telemetry_ws(State(st): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| telemetry_socket(st, socket))
}

async fn telemetry_socket(st: AppState, socket: WebSocket) {
    let mut sub = st.shared.telemetry.subscribe();
    let (mut tx, mut rx) = socket.split();
    loop {
        tokio::select! {
            ev = sub.next() => {
                let Some(ev) = ev else { break };
                let text = match serde_json::to_string(&ev) {
                    Ok(t) => t,
                    Err(e) => {
                        warn!("telemetry encode: {e}");
                        continue;
                    }
                };
                if tx.send(Message::Text(text.into())).await.is_err() {
                    break;
                }
            }
            msg = rx.next() => match msg {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                _ => {}
            },
        }
    }
}
