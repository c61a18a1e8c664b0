//! Service and command-line layer over the kinetune engine: a single-session
//! HTTP/WebSocket control plane, live playback, and batch subcommands.

pub mod cli;
pub mod error;
pub mod live;
pub mod service;
pub mod telemetry;

pub use error::{exit, Result, ServerError};
pub use live::{EngineCommand, LiveOptions, LiveProgress, LiveSession, StopSummary};
pub use service::{router, serve, AppState, ServeOptions};
pub use telemetry::{Telemetry, TelemetryEvent, TELEMETRY_SCHEMA_VERSION};
