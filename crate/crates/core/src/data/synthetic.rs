use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::midi::MidiNote;
use super::sequence::{Note, NoteSequence, MIDI_PITCH_OFFSET};

/// C-major pitch classes.
const MAJOR: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
/// C-major pentatonic pitch classes.
const PENTATONIC: [u8; 5] = [0, 2, 4, 7, 9];

/// Key index of degree `deg` of `scale`, counted from C1 (key 3).
fn scale_key(scale: &[u8], deg: i32) -> u8 {
    let n = scale.len() as i32;
    (3 + 12 * deg.div_euclid(n) + i32::from(scale[deg.rem_euclid(n) as usize])) as u8
}

fn degree_key(deg: i32) -> u8 {
    scale_key(&MAJOR, deg)
}

/// Pentatonic melodies made of short monotone runs (1–3 steps of one scale
/// degree) that alternate direction, kept to the eight notes C4–E5 so a piece
/// never uses more distinct pitches than there are buttons. Every interval is
/// 2 or 3 semitones; no pitch repeats back to back.
pub fn contour_fragments(pieces: usize, len: usize, seed: u64) -> Vec<NoteSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (15, 22);
    (0..pieces)
        .map(|p| {
            let mut deg: i32 = rng.random_range(lo..=hi);
            let mut up = rng.random_bool(0.5);
            let mut notes = Vec::with_capacity(len);
            let mut onset = 0.0;
            notes.push(Note { key: scale_key(&PENTATONIC, deg), onset });
            while notes.len() < len {
                for _ in 0..rng.random_range(1..=3) {
                    if notes.len() == len {
                        break;
                    }
                    if (up && deg == hi) || (!up && deg == lo) {
                        break;
                    }
                    deg += if up { 1 } else { -1 };
                    onset += [0.25, 0.5, 0.5, 0.75][rng.random_range(0..4)];
                    notes.push(Note { key: scale_key(&PENTATONIC, deg), onset });
                }
                up = !up;
            }
            NoteSequence::new(format!("fragment-{p:04}"), notes)
        })
        .collect()
}

/// Two fixed 64-note melodies (an arpeggio figure and a scale zig-zag) for
/// memorization checks.
pub fn two_melodies() -> Vec<NoteSequence> {
    let arpeggio: Vec<u8> = (0..64).map(|i| [39u8, 43, 46, 51, 46, 43][i % 6]).collect();
    let zigzag: Vec<u8> = (0..64).map(|i| degree_key(21 + [0, 1, 2, 3, 4, 3, 2, 1][i % 8] + (i / 16) as i32)).collect();
    vec![
        NoteSequence::from_keys("arpeggio", &arpeggio, 0.25),
        NoteSequence::from_keys("zigzag", &zigzag, 0.5),
    ]
}

/// Notes of `seq` as MIDI events at 480 ticks per quarter and 120 BPM.
pub fn to_midi_notes(seq: &NoteSequence) -> Vec<MidiNote> {
    let tick = |s: f64| (s * 960.0).round() as u32;
    seq.notes()
        .iter()
        .map(|n| MidiNote {
            pitch: n.key + MIDI_PITCH_OFFSET,
            velocity: 80,
            start_tick: tick(n.onset),
            end_tick: tick(n.onset + 0.2),
        })
        .collect()
}
