use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;
use tracing::{info, warn};

use super::protocol::{ClientMessage, ServerMessage};
use super::registry::{Connection, SessionRegistry};
use super::ServiceError;
use crate::engine::{DecoderWeights, LatencySummary, DEFAULT_TEMPERATURE};
use crate::model::load_checkpoint;

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub checkpoint: PathBuf,
    pub bind: SocketAddr,
    pub temperature: f64,
    pub static_dir: Option<PathBuf>,
    pub idle_timeout: Duration,
}

impl ServeOptions {
    pub fn new(checkpoint: impl Into<PathBuf>, bind: SocketAddr) -> Self {
        Self {
            checkpoint: checkpoint.into(),
            bind,
            temperature: DEFAULT_TEMPERATURE,
            static_dir: None,
            idle_timeout: Duration::from_secs(600),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub checkpoint: String,
    pub active_sessions: usize,
    /// Absent until the first press.
    pub press_latency: Option<LatencySummary>,
}

#[derive(Clone)]
struct AppState {
    registry: Arc<SessionRegistry>,
    shutdown: watch::Receiver<bool>,
}

/// A running server: its bound address and a handle to stop it.
pub struct RunningServer {
    pub addr: SocketAddr,
    pub registry: Arc<SessionRegistry>,
    shutdown: watch::Sender<bool>,
    task: JoinHandle<Result<(), ServiceError>>,
}

impl RunningServer {
    /// Sends note-offs for every held note, closes connections and waits for
    /// the server task to finish.
    pub async fn shutdown(self) -> Result<(), ServiceError> {
        let _ = self.shutdown.send(true);
        self.task.await.map_err(|e| ServiceError::Runtime(e.to_string()))?
    }
}

fn checkpoint_id(path: &Path, crc: u32) -> String {
    let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
    format!("{name}#{crc:08x}")
}

pub fn router(registry: Arc<SessionRegistry>, static_dir: Option<&Path>, shutdown: watch::Receiver<bool>) -> Router {
    let state = AppState { registry, shutdown };
    let router = Router::new().route("/healthz", get(healthz)).route("/ws", get(ws_upgrade)).with_state(state);
    match static_dir {
        Some(dir) => router.fallback_service(ServeDir::new(dir)),
        None => router,
    }
}

async fn healthz(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        checkpoint: state.registry.checkpoint_id().to_string(),
        active_sessions: state.registry.active_sessions(),
        press_latency: state.registry.press_latency(),
    })
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, state))
}

async fn connection(socket: WebSocket, state: AppState) {
    let (mut sink, mut stream) = socket.split();
    let (tx, mut rx) = mpsc::unbounded_channel::<ServerMessage>();
    let mut shutdown = state.shutdown.clone();
    let mut conn = Connection::default();
    let registry = state.registry.clone();

    loop {
        tokio::select! {
            incoming = stream.next() => {
                let replies = match incoming {
                    Some(Ok(Message::Text(text))) => match ClientMessage::parse(text.as_str()) {
                        Ok(msg) => registry.handle(&mut conn, msg, &tx),
                        Err(reply) => vec![reply],
                    },
                    Some(Ok(Message::Binary(_))) => vec![ServerMessage::error("bad_message", "expected a text frame")],
                    Some(Ok(Message::Ping(_) | Message::Pong(_))) => continue,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                };
                if send_all(&mut sink, &replies).await.is_err() {
                    break;
                }
            }
            Some(out) = rx.recv() => {
                if send_all(&mut sink, &[out]).await.is_err() {
                    break;
                }
            }
            _ = shutdown.changed() => {
                // the shutdown sweep may have released this session already
                let mut offs = registry.close(&mut conn);
                offs.extend(std::iter::from_fn(|| rx.try_recv().ok()));
                let _ = send_all(&mut sink, &offs).await;
                let _ = sink.send(Message::Close(None)).await;
                return;
            }
        }
    }
    // dropped mid-performance: nobody is listening, but nothing stays held
    let released = registry.close(&mut conn).len();
    if released > 0 {
        info!(released, "connection dropped with notes held; released");
    }
}

async fn send_all<S>(sink: &mut S, messages: &[ServerMessage]) -> Result<(), axum::Error>
where
    S: SinkExt<Message, Error = axum::Error> + Unpin,
{
    for m in messages {
        sink.feed(Message::Text(m.to_json().into())).await?;
    }
    sink.flush().await
}

/// Loads the checkpoint, binds, and starts serving in the background.
pub async fn spawn(options: ServeOptions) -> Result<RunningServer, ServiceError> {
    let (header, model) = load_checkpoint(&options.checkpoint)?;
    let weights = DecoderWeights::from_model(&model)?;
    if !(options.temperature >= 0.0 && options.temperature.is_finite()) {
        return Err(ServiceError::Config(format!("temperature must be non-negative, got {}", options.temperature)));
    }
    let registry = Arc::new(SessionRegistry::new(weights, checkpoint_id(&options.checkpoint, header.crc32), options.temperature));
    let listener = TcpListener::bind(options.bind)
        .await
        .map_err(|e| ServiceError::Bind { addr: options.bind.to_string(), source: e })?;
    let addr = listener.local_addr().map_err(|e| ServiceError::Bind { addr: options.bind.to_string(), source: e })?;
    let (shutdown_tx, shutdown_rx) = watch::channel(false);
    let app = router(registry.clone(), options.static_dir.as_deref(), shutdown_rx.clone());

    let reaper_registry = registry.clone();
    let mut reaper_stop = shutdown_rx.clone();
    let timeout = options.idle_timeout;
    tokio::spawn(async move {
        let mut tick = tokio::time::interval((timeout / 4).clamp(Duration::from_millis(10), Duration::from_secs(30)));
        loop {
            tokio::select! {
                _ = tick.tick() => { reaper_registry.reap_idle(timeout); }
                _ = reaper_stop.changed() => return,
            }
        }
    });

    let mut stop = shutdown_rx;
    let shutdown_registry = registry.clone();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = stop.changed().await;
                shutdown_registry.release_everything();
            })
            .await
            .map_err(|e| ServiceError::Runtime(e.to_string()))
    });
    info!(%addr, "serving");
    Ok(RunningServer { addr, registry, shutdown: shutdown_tx, task })
}

/// Serves until Ctrl-C, then shuts down gracefully.
pub async fn serve(options: ServeOptions) -> Result<(), ServiceError> {
    let server = spawn(options).await?;
    if let Err(e) = tokio::signal::ctrl_c().await {
        warn!(%e, "could not listen for Ctrl-C; shutting down");
    }
    info!("shutting down");
    server.shutdown().await
}
