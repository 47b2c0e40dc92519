//! WebSocket service hosting one checkpoint and many live decoder sessions.

mod protocol;
mod registry;
mod server;

pub use protocol::{ClientMessage, ServerMessage, KNOWN_TYPES};
pub use registry::{Connection, SessionRegistry};
pub use server::{router, serve, spawn, Health, RunningServer, ServeOptions};

use thiserror::Error;

use crate::engine::EngineError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Checkpoint(#[from] ModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid service options: {0}")]
    Config(String),
    #[error("server failed: {0}")]
    Runtime(String),
}
