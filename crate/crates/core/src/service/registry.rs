use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use tokio::sync::mpsc::UnboundedSender;
use tracing::info;

use super::protocol::{ClientMessage, ServerMessage};
use crate::engine::{summarize_latencies, DecoderSession, DecoderWeights, EngineError, LatencySummary};

/// Press latencies kept for the health report.
const LATENCY_WINDOW: usize = 1000;

struct Entry {
    session: DecoderSession,
    last_active: Instant,
    /// Out-of-band channel to the owning connection (reaper, shutdown).
    outbox: UnboundedSender<ServerMessage>,
}

/// Live sessions keyed by opaque id, plus the shared checkpoint.
pub struct SessionRegistry {
    weights: Arc<DecoderWeights>,
    checkpoint_id: String,
    default_temperature: f64,
    started: Instant,
    sessions: Mutex<HashMap<String, Arc<Mutex<Entry>>>>,
    latencies: Mutex<VecDeque<f64>>,
}

/// Per-connection state: which session the connection is bound to.
#[derive(Default)]
pub struct Connection {
    pub session_id: Option<String>,
}

fn engine_error(e: EngineError) -> ServerMessage {
    let code = match e {
        EngineError::InvalidTemperature(_) => "invalid_temperature",
        EngineError::InvalidButton(_) => "invalid_button",
        EngineError::LookaheadUnsupported => "lookahead_unsupported",
        EngineError::Checkpoint(_) | EngineError::InvalidArgument(_) => "engine_error",
    };
    ServerMessage::error(code, e.to_string())
}

impl SessionRegistry {
    pub fn new(weights: Arc<DecoderWeights>, checkpoint_id: impl Into<String>, default_temperature: f64) -> Self {
        Self {
            weights,
            checkpoint_id: checkpoint_id.into(),
            default_temperature,
            started: Instant::now(),
            sessions: Mutex::new(HashMap::new()),
            latencies: Mutex::new(VecDeque::with_capacity(LATENCY_WINDOW)),
        }
    }

    pub fn checkpoint_id(&self) -> &str {
        &self.checkpoint_id
    }

    pub fn active_sessions(&self) -> usize {
        self.sessions.lock().expect("registry lock").len()
    }

    /// Notes currently sounding across all sessions.
    pub fn sounding_notes(&self) -> usize {
        let sessions = self.sessions.lock().expect("registry lock");
        sessions.values().map(|e| e.lock().expect("session lock").session.held().len()).sum()
    }

    pub fn press_latency(&self) -> Option<LatencySummary> {
        let window: Vec<f64> = self.latencies.lock().expect("latency lock").iter().copied().collect();
        summarize_latencies(&window)
    }

    fn record_latency(&self, ms: f64) {
        let mut window = self.latencies.lock().expect("latency lock");
        if window.len() == LATENCY_WINDOW {
            window.pop_front();
        }
        window.push_back(ms);
    }

    /// Milliseconds since the server started, used when a client omits `t_ms`.
    pub fn now_ms(&self) -> f64 {
        self.started.elapsed().as_secs_f64() * 1e3
    }

    fn entry(&self, conn: &Connection) -> Result<Arc<Mutex<Entry>>, ServerMessage> {
        let id = conn.session_id.as_deref().ok_or_else(|| ServerMessage::error("no_session", "send init first"))?;
        self.sessions
            .lock()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServerMessage::error("no_session", format!("session `{id}` does not exist")))
    }

    /// Drops the connection's session and returns note-offs for anything it
    /// was still holding.
    pub fn close(&self, conn: &mut Connection) -> Vec<ServerMessage> {
        let Some(id) = conn.session_id.take() else { return Vec::new() };
        let removed = self.sessions.lock().expect("registry lock").remove(&id);
        let Some(entry) = removed else { return Vec::new() };
        let mut entry = entry.lock().expect("session lock");
        let now = self.now_ms() / 1e3;
        entry.session.release_all(now).iter().map(ServerMessage::from_event).collect()
    }

    /// Dispatches one client message; every message yields at least one reply.
    pub fn handle(&self, conn: &mut Connection, msg: ClientMessage, outbox: &UnboundedSender<ServerMessage>) -> Vec<ServerMessage> {
        match msg {
            ClientMessage::Init { seed, temperature } => {
                let mut replies = self.close(conn);
                let temperature = temperature.unwrap_or(self.default_temperature);
                let seed = seed.unwrap_or_else(|| rand::rng().random());
                match DecoderSession::new(self.weights.clone(), temperature, seed) {
                    Ok(session) => {
                        let id = format!("{:016x}", rand::rng().random::<u64>());
                        let entry = Entry { session, last_active: Instant::now(), outbox: outbox.clone() };
                        self.sessions.lock().expect("registry lock").insert(id.clone(), Arc::new(Mutex::new(entry)));
                        conn.session_id = Some(id.clone());
                        replies.push(ServerMessage::Ready { session_id: id });
                    }
                    Err(e) => replies.push(engine_error(e)),
                }
                replies
            }
            other => {
                let entry = match self.entry(conn) {
                    Ok(e) => e,
                    Err(reply) => return vec![reply],
                };
                let mut entry = entry.lock().expect("session lock");
                entry.last_active = Instant::now();
                let session_id = conn.session_id.clone().unwrap_or_default();
                self.dispatch(&mut entry.session, other, session_id)
            }
        }
    }

    fn dispatch(&self, session: &mut DecoderSession, msg: ClientMessage, session_id: String) -> Vec<ServerMessage> {
        let seconds = |t_ms: Option<f64>| t_ms.unwrap_or_else(|| self.now_ms()) / 1e3;
        match msg {
            ClientMessage::Init { .. } => unreachable!("handled by caller"),
            ClientMessage::Press { button, t_ms } => {
                let start = Instant::now();
                let result = session.press(button, seconds(t_ms));
                self.record_latency(start.elapsed().as_secs_f64() * 1e3);
                match result {
                    Ok(events) => events.iter().map(ServerMessage::from_event).collect(),
                    Err(e) => vec![engine_error(e)],
                }
            }
            ClientMessage::Release { button, t_ms } => match session.release(button, seconds(t_ms)) {
                Ok(Some(event)) => vec![ServerMessage::from_event(&event)],
                Ok(None) => vec![ServerMessage::error("not_held", format!("button {button} is not sounding"))],
                Err(e) => vec![engine_error(e)],
            },
            ClientMessage::Lookahead => match session.lookahead() {
                Ok(m) => vec![ServerMessage::LookaheadResult { matrix: m.rows().into_iter().map(|r| r.to_vec()).collect() }],
                Err(e) => vec![engine_error(e)],
            },
            ClientMessage::Reset => {
                let mut replies: Vec<ServerMessage> = session.reset().iter().map(ServerMessage::from_event).collect();
                replies.push(ServerMessage::Ready { session_id });
                replies
            }
            ClientMessage::SetTemperature { temperature } => match session.set_temperature(temperature) {
                Ok(()) => vec![ServerMessage::Ready { session_id }],
                Err(e) => vec![engine_error(e)],
            },
        }
    }

    /// Removes sessions idle for longer than `timeout`, sending their
    /// note-offs to the owning connection. Returns how many were reaped.
    pub fn reap_idle(&self, timeout: Duration) -> usize {
        let now = self.now_ms() / 1e3;
        let mut sessions = self.sessions.lock().expect("registry lock");
        let before = sessions.len();
        sessions.retain(|id, entry| {
            let mut entry = entry.lock().expect("session lock");
            if entry.last_active.elapsed() < timeout {
                return true;
            }
            for event in entry.session.release_all(now) {
                let _ = entry.outbox.send(ServerMessage::from_event(&event));
            }
            let _ = entry.outbox.send(ServerMessage::error("no_session", format!("session `{id}` expired")));
            info!(session = %id, "reaped idle session");
            false
        });
        before - sessions.len()
    }

    /// Releases every held note in every session (server shutdown).
    pub fn release_everything(&self) {
        let now = self.now_ms() / 1e3;
        let sessions = self.sessions.lock().expect("registry lock");
        for entry in sessions.values() {
            let mut entry = entry.lock().expect("session lock");
            for event in entry.session.release_all(now) {
                let _ = entry.outbox.send(ServerMessage::from_event(&event));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GenieModel, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tokio::sync::mpsc::unbounded_channel;

    fn registry(use_dt: bool) -> SessionRegistry {
        let config = ModelConfig { hidden_size: 8, use_dt, ..ModelConfig::default() };
        let model = GenieModel::<f32>::init(config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        SessionRegistry::new(DecoderWeights::from_model(&model).unwrap(), "test", 0.25)
    }

    fn codes(replies: &[ServerMessage]) -> Vec<String> {
        replies
            .iter()
            .map(|m| match m {
                ServerMessage::Error { code, .. } => code.clone(),
                other => serde_json::to_value(other).unwrap()["type"].as_str().unwrap().to_string(),
            })
            .collect()
    }

    #[test]
    fn session_lifecycle() {
        let reg = registry(false);
        let (tx, _rx) = unbounded_channel();
        let mut conn = Connection::default();
        assert_eq!(reg.active_sessions(), 0);
        assert_eq!(reg.press_latency(), None);
        assert_eq!(codes(&reg.handle(&mut conn, ClientMessage::Press { button: 1, t_ms: None }, &tx)), ["no_session"]);

        assert_eq!(codes(&reg.handle(&mut conn, ClientMessage::Init { seed: Some(1), temperature: None }, &tx)), ["ready"]);
        assert_eq!(reg.active_sessions(), 1);
        assert_eq!(codes(&reg.handle(&mut conn, ClientMessage::Press { button: 4, t_ms: Some(0.0) }, &tx)), ["note_on"]);
        assert!(reg.press_latency().is_some());
        assert_eq!(codes(&reg.handle(&mut conn, ClientMessage::Press { button: 4, t_ms: Some(10.0) }, &tx)), ["note_off", "note_on"]);
        assert_eq!(codes(&reg.handle(&mut conn, ClientMessage::Press { button: 9, t_ms: None }, &tx)), ["invalid_button"]);
        assert_eq!(codes(&reg.handle(&mut conn, ClientMessage::Release { button: 2, t_ms: None }, &tx)), ["not_held"]);
        assert_eq!(codes(&reg.handle(&mut conn, ClientMessage::Lookahead, &tx)), ["lookahead_result"]);
        assert_eq!(codes(&reg.handle(&mut conn, ClientMessage::SetTemperature { temperature: -1.0 }, &tx)), ["invalid_temperature"]);
        assert_eq!(codes(&reg.handle(&mut conn, ClientMessage::SetTemperature { temperature: 0.0 }, &tx)), ["ready"]);
        reg.handle(&mut conn, ClientMessage::Press { button: 0, t_ms: None }, &tx);
        assert_eq!(reg.sounding_notes(), 2);
        assert_eq!(codes(&reg.handle(&mut conn, ClientMessage::Reset, &tx)), ["note_off", "note_off", "ready"]);
        assert_eq!(reg.sounding_notes(), 0);

        reg.handle(&mut conn, ClientMessage::Press { button: 5, t_ms: None }, &tx);
        assert_eq!(codes(&reg.close(&mut conn)), ["note_off"]);
        assert_eq!(reg.active_sessions(), 0);
    }

    #[test]
    fn lookahead_rejected_for_dt_models() {
        let reg = registry(true);
        let (tx, _rx) = unbounded_channel();
        let mut conn = Connection::default();
        reg.handle(&mut conn, ClientMessage::Init { seed: None, temperature: None }, &tx);
        assert_eq!(codes(&reg.handle(&mut conn, ClientMessage::Lookahead, &tx)), ["lookahead_unsupported"]);
    }

    #[test]
    fn idle_sessions_are_reaped_with_note_offs() {
        let reg = registry(false);
        let (tx, mut rx) = unbounded_channel();
        let mut conn = Connection::default();
        reg.handle(&mut conn, ClientMessage::Init { seed: Some(3), temperature: None }, &tx);
        reg.handle(&mut conn, ClientMessage::Press { button: 2, t_ms: Some(0.0) }, &tx);
        assert_eq!(reg.reap_idle(Duration::from_secs(600)), 0);
        assert_eq!(reg.reap_idle(Duration::ZERO), 1);
        assert!(matches!(rx.try_recv().unwrap(), ServerMessage::NoteOff { button: 2, .. }));
        assert_eq!(codes(&reg.handle(&mut conn, ClientMessage::Reset, &tx)), ["no_session"]);
    }
}
