use std::net::SocketAddr;
use std::path::PathBuf;

use kinetune_analysis::AnalysisError;
use kinetune_core::Error as CoreError;
use thiserror::Error;

pub type Result<T, E = ServerError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Analysis(#[from] AnalysisError),

    #[error("{0}")]
    Usage(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("internal: {0}")]
    Internal(String),
}

/// Process exit codes, one per error class.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const INVALID_INPUT: i32 = 3;
    pub const LIBRARY: i32 = 4;
    pub const WEIGHTS: i32 = 5;
    pub const INSUFFICIENT_DATA: i32 = 6;
    pub const IO: i32 = 7;
    pub const STATISTICS: i32 = 8;
    pub const NETWORK: i32 = 9;
}

fn core_code(e: &CoreError) -> i32 {
    match e {
        CoreError::InvalidArgument(_) | CoreError::DegenerateVector(_) | CoreError::Json(_) => exit::INVALID_INPUT,
        CoreError::EmptyLibrary
        | CoreError::DuplicateId(_)
        | CoreError::UnknownId(_)
        | CoreError::PolicyExhausted
        | CoreError::Integrity(_) => exit::LIBRARY,
        CoreError::Format(_) => exit::WEIGHTS,
        CoreError::InsufficientData(_) => exit::INSUFFICIENT_DATA,
        CoreError::Io { .. } | CoreError::Wav(_) => exit::IO,
    }
}

impl ServerError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ServerError::Core(e) => core_code(e),
            ServerError::Analysis(e) => match e {
                AnalysisError::Core(c) => core_code(c),
                AnalysisError::InvalidArgument(_) | AnalysisError::Json(_) => exit::INVALID_INPUT,
                AnalysisError::InsufficientData(_) => exit::INSUFFICIENT_DATA,
                AnalysisError::Io { .. } => exit::IO,
                AnalysisError::UndefinedCorrelation(_)
                | AnalysisError::DegenerateVariance(_)
                | AnalysisError::NumericalRank { .. } => exit::STATISTICS,
            },
            ServerError::Usage(_) => exit::USAGE,
            ServerError::Conflict(_) => exit::INVALID_INPUT,
            ServerError::Bind { .. } => exit::NETWORK,
            ServerError::Io { .. } => exit::IO,
            ServerError::Json(_) => exit::INVALID_INPUT,
            ServerError::Internal(_) => exit::INTERNAL,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ServerError::Io {
            path: path.into(),
            source,
        }
    }
}
