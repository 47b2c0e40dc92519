use serde::{Deserialize, Serialize};

use crate::engine::{NoteEvent, NoteKind};

/// Client → server. One JSON object per WebSocket text frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Init {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        temperature: Option<f64>,
    },
    Press {
        button: u8,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_ms: Option<f64>,
    },
    Release {
        button: u8,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_ms: Option<f64>,
    },
    Lookahead,
    Reset,
    SetTemperature {
        temperature: f64,
    },
}

/// Server → client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServerMessage {
    Ready {
        session_id: String,
    },
    NoteOn {
        key: u8,
        button: u8,
        t_ms: f64,
    },
    NoteOff {
        key: u8,
        button: u8,
        t_ms: f64,
    },
    LookaheadResult {
        /// 8 rows (buttons) × 88 columns (keys).
        matrix: Vec<Vec<f64>>,
    },
    Error {
        code: String,
        message: String,
    },
}

pub const KNOWN_TYPES: [&str; 6] = ["init", "press", "release", "lookahead", "reset", "set_temperature"];

impl ServerMessage {
    pub fn error(code: &str, message: impl Into<String>) -> Self {
        ServerMessage::Error { code: code.to_string(), message: message.into() }
    }

    pub fn from_event(e: &NoteEvent) -> Self {
        let t_ms = e.time * 1000.0;
        match e.kind {
            NoteKind::On => ServerMessage::NoteOn { key: e.key, button: e.button, t_ms },
            NoteKind::Off => ServerMessage::NoteOff { key: e.key, button: e.button, t_ms },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server message serializes")
    }
}

impl ClientMessage {
    /// Parses one frame, mapping failures to the error reply to send back.
    pub fn parse(text: &str) -> Result<Self, ServerMessage> {
        serde_json::from_str(text).map_err(|e| {
            let ty = serde_json::from_str::<serde_json::Value>(text)
                .ok()
                .and_then(|v| v.get("type").and_then(|t| t.as_str()).map(str::to_string));
            match ty {
                Some(t) if !KNOWN_TYPES.contains(&t.as_str()) => ServerMessage::error("unknown_type", format!("unknown message type `{t}`")),
                _ => ServerMessage::error("bad_message", e.to_string()),
            }
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("client message serializes")
    }
}
