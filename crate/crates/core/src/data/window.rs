use std::ops::Range;

use rand::seq::IndexedRandom;
use rand::Rng;

use super::sequence::{dt_bucket, NoteSequence, FIRST_NOTE_DT_BUCKET, NUM_KEYS};
use super::DataError;

/// Transpositions in semitones, `[-6, 6)`.
pub const TRANSPOSE_RANGE: Range<i8> = -6..6;

/// Fixed-length window of keys with their ΔT buckets, after transposition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingExample {
    pub keys: Vec<u8>,
    pub dt_buckets: Vec<u8>,
    pub transpose: i8,
}

impl TrainingExample {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Window built from bare keys with a constant inter-onset gap.
    pub fn from_keys(keys: &[u8], dt: u8) -> Self {
        let mut dt_buckets = vec![dt; keys.len()];
        if let Some(first) = dt_buckets.first_mut() {
            *first = FIRST_NOTE_DT_BUCKET;
        }
        Self {
            keys: keys.to_vec(),
            dt_buckets,
            transpose: 0,
        }
    }
}

/// Shifts that keep every key on the keyboard.
pub fn valid_shifts(keys: &[u8]) -> Vec<i8> {
    let (Some(&lo), Some(&hi)) = (keys.iter().min(), keys.iter().max()) else {
        return TRANSPOSE_RANGE.collect();
    };
    TRANSPOSE_RANGE
        .filter(|&s| i16::from(lo) + i16::from(s) >= 0 && i16::from(hi) + i16::from(s) < NUM_KEYS as i16)
        .collect()
}

/// Window of `n` notes starting at `start`, transposed by `shift`.
pub fn window_at(seq: &NoteSequence, start: usize, n: usize, shift: i8) -> Result<TrainingExample, DataError> {
    if start + n > seq.len() || n == 0 {
        return Err(DataError::TooShort {
            id: seq.source_id.clone(),
            len: seq.len(),
            window: start + n,
        });
    }
    let notes = &seq.notes()[start..start + n];
    let mut keys = Vec::with_capacity(n);
    for note in notes {
        let k = i16::from(note.key) + i16::from(shift);
        if !(0..NUM_KEYS as i16).contains(&k) {
            return Err(DataError::Malformed(format!("shift {shift} moves key {} off the keyboard", note.key)));
        }
        keys.push(k as u8);
    }
    let mut dt_buckets = Vec::with_capacity(n);
    dt_buckets.push(FIRST_NOTE_DT_BUCKET);
    for pair in notes.windows(2) {
        dt_buckets.push(dt_bucket(pair[1].onset - pair[0].onset)?);
    }
    Ok(TrainingExample {
        keys,
        dt_buckets,
        transpose: shift,
    })
}

/// Random contiguous window with a random in-range transposition.
pub fn sample_window(seq: &NoteSequence, n: usize, rng: &mut impl Rng) -> Result<TrainingExample, DataError> {
    if seq.len() < n || n == 0 {
        return Err(DataError::TooShort {
            id: seq.source_id.clone(),
            len: seq.len(),
            window: n,
        });
    }
    let start = rng.random_range(0..=seq.len() - n);
    let keys: Vec<u8> = seq.notes()[start..start + n].iter().map(|x| x.key).collect();
    let shift = *valid_shifts(&keys).choose(rng).expect("zero shift is always valid");
    window_at(seq, start, n, shift)
}
