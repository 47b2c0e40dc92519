use std::fmt::Write as _;

use super::DataError;

pub const NUM_KEYS: usize = 88;
/// MIDI pitch of the lowest piano key (A0).
pub const MIDI_PITCH_OFFSET: u8 = 21;
pub const NUM_DT_BUCKETS: usize = 32;
/// ΔT bucket given to the first note of a window or session, as if it
/// followed a long rest.
pub const FIRST_NOTE_DT_BUCKET: u8 = (NUM_DT_BUCKETS - 1) as u8;

/// A single key press: piano key in `[0, 88)` and onset time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Note {
    pub key: u8,
    pub onset: f64,
}

/// Monophonic event stream ordered by onset, chord notes ascending by key.
#[derive(Clone, Debug, PartialEq)]
pub struct NoteSequence {
    pub source_id: String,
    notes: Vec<Note>,
}

/// Orders notes by `(onset, key)`. Stable and idempotent.
pub fn flatten_order(mut notes: Vec<Note>) -> Vec<Note> {
    notes.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.key.cmp(&b.key)));
    notes
}

/// Time since the previous note quantized to 32 buckets over `[0, 1)` s,
/// saturating at the last bucket.
pub fn dt_bucket(delta_seconds: f64) -> Result<u8, DataError> {
    if delta_seconds < 0.0 || delta_seconds.is_nan() {
        return Err(DataError::NegativeDelta(delta_seconds));
    }
    let raw = (delta_seconds * NUM_DT_BUCKETS as f64).floor();
    Ok(raw.min((NUM_DT_BUCKETS - 1) as f64) as u8)
}

impl NoteSequence {
    /// Builds a sequence, flattening the notes into canonical order.
    /// Keys outside the piano range are dropped.
    pub fn new(source_id: impl Into<String>, notes: Vec<Note>) -> Self {
        let notes = notes.into_iter().filter(|n| (n.key as usize) < NUM_KEYS).collect();
        Self {
            source_id: source_id.into(),
            notes: flatten_order(notes),
        }
    }

    /// Sequence with onsets spaced `step` seconds apart.
    pub fn from_keys(source_id: impl Into<String>, keys: &[u8], step: f64) -> Self {
        let notes = keys
            .iter()
            .enumerate()
            .map(|(i, &key)| Note { key, onset: i as f64 * step })
            .collect();
        Self::new(source_id, notes)
    }

    pub fn notes(&self) -> &[Note] {
        &self.notes
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn keys(&self) -> Vec<u8> {
        self.notes.iter().map(|n| n.key).collect()
    }

    /// One `key onset` pair per line, onsets with microsecond precision.
    pub fn to_debug_text(&self) -> String {
        let mut out = format!("# {}\n", self.source_id);
        for n in &self.notes {
            let _ = writeln!(out, "{} {:.6}", n.key, n.onset);
        }
        out
    }

    pub fn from_debug_text(text: &str) -> Result<Self, DataError> {
        let mut lines = text.lines();
        let source_id = lines
            .next()
            .and_then(|l| l.strip_prefix("# "))
            .ok_or_else(|| DataError::Malformed("debug text lacks `# <id>` header".into()))?;
        let mut notes = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut parts = line.split_whitespace();
            let parsed = parts
                .next()
                .and_then(|k| k.parse::<u8>().ok())
                .zip(parts.next().and_then(|t| t.parse::<f64>().ok()));
            let (key, onset) = parsed.ok_or_else(|| DataError::Malformed(format!("bad note line `{line}`")))?;
            notes.push(Note { key, onset });
        }
        Ok(Self::new(source_id, notes))
    }
}
