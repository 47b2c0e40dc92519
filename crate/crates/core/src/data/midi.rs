//! Standard MIDI File (format 0/1) reader and a small format-0 writer.
//!
//! Only note-on onsets and tempo changes matter here; note-offs, controllers
//! (sustain pedal included), velocities and unknown meta events are skipped.

use super::sequence::{Note, NoteSequence, MIDI_PITCH_OFFSET, NUM_KEYS};
use super::DataError;

const DEFAULT_TEMPO_US: u32 = 500_000;

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], DataError> {
        if self.remaining() < n {
            return Err(DataError::Truncated(what));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, DataError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, DataError> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Variable-length quantity, at most four bytes.
    fn vlq(&mut self, what: &'static str) -> Result<u32, DataError> {
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.u8(what)?;
            value = (value << 7) | u32::from(b & 0x7f);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(DataError::Malformed(format!("{what}: variable-length quantity longer than 4 bytes")))
    }
}

enum Timing {
    Metrical { ticks_per_quarter: u32 },
    Timecode { seconds_per_tick: f64 },
}

/// Parses an SMF byte stream into a flattened note sequence. The
/// `source_id` of the result is empty; callers name it.
pub fn parse_midi(bytes: &[u8]) -> Result<NoteSequence, DataError> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "header magic").map_err(|_| DataError::BadMagic("file shorter than 4 bytes".into()))?;
    if magic != b"MThd" {
        return Err(DataError::BadMagic(format!("expected `MThd`, found {magic:02x?}")));
    }
    let header_len = r.u32("header length")? as usize;
    if header_len < 6 {
        return Err(DataError::Malformed(format!("header length {header_len} < 6")));
    }
    let header = r.take(header_len, "header chunk")?;
    let format = u16::from_be_bytes([header[0], header[1]]);
    let ntracks = u16::from_be_bytes([header[2], header[3]]);
    let division = u16::from_be_bytes([header[4], header[5]]);
    if format > 1 {
        return Err(DataError::Malformed(format!("SMF format {format} unsupported")));
    }
    let timing = if division & 0x8000 == 0 {
        if division == 0 {
            return Err(DataError::Malformed("zero ticks per quarter note".into()));
        }
        Timing::Metrical { ticks_per_quarter: u32::from(division) }
    } else {
        let fps = -((division >> 8) as u8 as i8) as f64;
        let ticks_per_frame = f64::from(division & 0xff);
        if fps <= 0.0 || ticks_per_frame <= 0.0 {
            return Err(DataError::Malformed("invalid SMPTE division".into()));
        }
        Timing::Timecode { seconds_per_tick: 1.0 / (fps * ticks_per_frame) }
    };

    let mut onsets: Vec<(u64, u8)> = Vec::new();
    let mut tempos: Vec<(u64, u32)> = Vec::new();
    let mut tracks_seen = 0;
    while r.remaining() > 0 && tracks_seen < ntracks {
        let id = r.take(4, "chunk id")?;
        let len = r.u32("chunk length")? as usize;
        let body = r.take(len, "chunk body")?;
        if id != b"MTrk" {
            continue;
        }
        tracks_seen += 1;
        parse_track(body, &mut onsets, &mut tempos)?;
    }
    if tracks_seen < ntracks {
        return Err(DataError::Truncated("fewer track chunks than the header declares"));
    }

    let to_seconds = tick_clock(&timing, tempos);
    let notes = onsets
        .into_iter()
        .filter_map(|(tick, pitch)| {
            let key = pitch.checked_sub(MIDI_PITCH_OFFSET)?;
            ((key as usize) < NUM_KEYS).then(|| Note { key, onset: to_seconds(tick) })
        })
        .collect();
    Ok(NoteSequence::new("", notes))
}

fn parse_track(body: &[u8], onsets: &mut Vec<(u64, u8)>, tempos: &mut Vec<(u64, u32)>) -> Result<(), DataError> {
    let mut r = Reader::new(body);
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    while r.remaining() > 0 {
        tick += u64::from(r.vlq("event delta")?);
        let first = r.u8("event status")?;
        match first {
            0xff => {
                running = None;
                let kind = r.u8("meta type")?;
                let len = r.vlq("meta length")? as usize;
                let data = r.take(len, "meta data")?;
                match kind {
                    0x51 if len == 3 => {
                        let us = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                        if us > 0 {
                            tempos.push((tick, us));
                        }
                    }
                    0x2f => break,
                    _ => {}
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = r.vlq("sysex length")? as usize;
                r.take(len, "sysex data")?;
            }
            _ => {
                let (status, data0) = if first & 0x80 != 0 {
                    running = Some(first);
                    (first, r.u8("channel data")?)
                } else {
                    let status = running.ok_or_else(|| {
                        DataError::Malformed(format!("data byte {first:#04x} without running status"))
                    })?;
                    (status, first)
                };
                match status & 0xf0 {
                    0x90 => {
                        let velocity = r.u8("note-on velocity")?;
                        if velocity > 0 {
                            onsets.push((tick, data0));
                        }
                    }
                    0x80 | 0xa0 | 0xb0 | 0xe0 => {
                        r.u8("channel data")?;
                    }
                    0xc0 | 0xd0 => {}
                    _ => return Err(DataError::Malformed(format!("unexpected status byte {status:#04x}"))),
                }
            }
        }
    }
    Ok(())
}

/// Builds the tick → seconds mapping from the tempo map (120 BPM until the
/// first tempo event).
fn tick_clock(timing: &Timing, mut tempos: Vec<(u64, u32)>) -> impl Fn(u64) -> f64 {
    tempos.sort_by_key(|&(tick, _)| tick);
    let (tpq, fixed) = match *timing {
        Timing::Metrical { ticks_per_quarter } => (f64::from(ticks_per_quarter), None),
        Timing::Timecode { seconds_per_tick } => (1.0, Some(seconds_per_tick)),
    };
    // (start tick, seconds at start, seconds per tick)
    let mut segments = vec![(0u64, 0.0f64, f64::from(DEFAULT_TEMPO_US) * 1e-6 / tpq)];
    if fixed.is_none() {
        for (tick, us) in tempos {
            let &(start, secs, spt) = segments.last().expect("non-empty");
            let at = secs + (tick - start) as f64 * spt;
            let next = (tick, at, f64::from(us) * 1e-6 / tpq);
            if tick == start {
                *segments.last_mut().expect("non-empty") = next;
            } else {
                segments.push(next);
            }
        }
    }
    move |tick| match fixed {
        Some(spt) => tick as f64 * spt,
        None => {
            let seg = segments.partition_point(|&(start, _, _)| start <= tick) - 1;
            let (start, secs, spt) = segments[seg];
            secs + (tick - start) as f64 * spt
        }
    }
}

/// A note for [`write_midi`], in ticks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MidiNote {
    pub pitch: u8,
    pub velocity: u8,
    pub start_tick: u32,
    pub end_tick: u32,
}

fn push_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 4];
    let mut n = 0;
    loop {
        buf[n] = (value & 0x7f) as u8;
        n += 1;
        value >>= 7;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(if i > 0 { buf[i] | 0x80 } else { buf[i] });
    }
}

/// Writes a single-track format-0 file. `tempos` are `(tick, bpm)` pairs.
/// Note-offs are written as note-on with velocity 0, using running status.
pub fn write_midi(notes: &[MidiNote], ticks_per_quarter: u16, tempos: &[(u32, f64)]) -> Vec<u8> {
    // (tick, order, bytes): tempo before note-off before note-on at equal ticks.
    let mut events: Vec<(u32, u8, Vec<u8>)> = Vec::new();
    for &(tick, bpm) in tempos {
        let us = (60_000_000.0 / bpm).round() as u32;
        let b = us.to_be_bytes();
        events.push((tick, 0, vec![0xff, 0x51, 0x03, b[1], b[2], b[3]]));
    }
    for n in notes {
        events.push((n.end_tick, 1, vec![0x90, n.pitch & 0x7f, 0]));
        events.push((n.start_tick, 2, vec![0x90, n.pitch & 0x7f, n.velocity.clamp(1, 127)]));
    }
    events.sort_by_key(|e| (e.0, e.1));

    let mut track = Vec::new();
    let mut last = 0u32;
    let mut running = None;
    for (tick, _, bytes) in events {
        push_vlq(&mut track, tick - last);
        last = tick;
        if bytes[0] == 0xff {
            running = None;
            track.extend_from_slice(&bytes);
        } else if running == Some(bytes[0]) {
            track.extend_from_slice(&bytes[1..]);
        } else {
            running = Some(bytes[0]);
            track.extend_from_slice(&bytes);
        }
    }
    track.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(track.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&ticks_per_quarter.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smf0(division: u16, track: &[u8]) -> Vec<u8> {
        let mut out = b"MThd".to_vec();
        out.extend_from_slice(&[0, 0, 0, 6, 0, 0, 0, 1]);
        out.extend_from_slice(&division.to_be_bytes());
        out.extend_from_slice(b"MTrk");
        out.extend_from_slice(&(track.len() as u32).to_be_bytes());
        out.extend_from_slice(track);
        out
    }

    #[test]
    fn single_middle_c() {
        // delta 0, note-on ch0 pitch 60 vel 100, delta 96 note-off, end of track
        let bytes = smf0(96, &[0x00, 0x90, 60, 100, 0x60, 0x80, 60, 0, 0x00, 0xff, 0x2f, 0x00]);
        let seq = parse_midi(&bytes).unwrap();
        assert_eq!(seq.notes(), &[Note { key: 39, onset: 0.0 }]);
    }

    #[test]
    fn tempo_change_hand_computed() {
        // 480 ticks per quarter, 120 BPM then 60 BPM from tick 960.
        // Onsets at ticks 0, 480, 960, 1440, 1920:
        //   0 → 0.0, 480 → 0.5, 960 → 1.0, then 1 s per quarter: 1440 → 2.0, 1920 → 3.0
        let mut track = vec![0x00, 0xff, 0x51, 0x03, 0x07, 0xa1, 0x20]; // 500000 us
        fn push_note(track: &mut Vec<u8>, delta: &[u8], pitch: u8) {
            track.extend_from_slice(delta);
            track.extend_from_slice(&[0x90, pitch, 64]);
        }
        push_note(&mut track, &[0x00], 60);
        push_note(&mut track, &[0x83, 0x60], 62); // 480
        track.extend_from_slice(&[0x83, 0x60, 0xff, 0x51, 0x03, 0x0f, 0x42, 0x40]); // tick 960: 1000000 us
        push_note(&mut track, &[0x00], 64);
        push_note(&mut track, &[0x83, 0x60], 65);
        push_note(&mut track, &[0x83, 0x60], 67);
        track.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
        let seq = parse_midi(&smf0(480, &track)).unwrap();
        let expected = [(39, 0.0), (41, 0.5), (43, 1.0), (44, 2.0), (46, 3.0)];
        assert_eq!(seq.len(), expected.len());
        for (n, (k, t)) in seq.notes().iter().zip(expected) {
            assert_eq!(n.key, k);
            assert!((n.onset - t).abs() < 1e-12, "{n:?} vs {t}");
        }
    }

    #[test]
    fn running_status_and_zero_velocity() {
        // note-on 60, then running-status note-on 64, then 60 vel 0 (off)
        let bytes = smf0(
            96,
            &[0x00, 0x90, 60, 90, 0x00, 64, 90, 0x30, 60, 0, 0x00, 0xff, 0x2f, 0x00],
        );
        let seq = parse_midi(&bytes).unwrap();
        assert_eq!(seq.keys(), vec![39, 43]);
    }

    #[test]
    fn out_of_piano_range_dropped_and_unknown_meta_skipped() {
        let bytes = smf0(
            96,
            &[
                0x00, 0xff, 0x03, 0x04, b'n', b'a', b'm', b'e', // track name
                0x00, 0xff, 0x7f, 0x02, 0x01, 0x02, // sequencer-specific
                0x00, 0xb0, 64, 127, // sustain pedal
                0x00, 0x90, 20, 50, // below A0
                0x00, 0x90, 21, 50, // A0
                0x00, 0x90, 109, 50, // above C8
                0x00, 0x90, 108, 50, // C8
                0x00, 0xff, 0x2f, 0x00,
            ],
        );
        assert_eq!(parse_midi(&bytes).unwrap().keys(), vec![0, 87]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(parse_midi(b"RIFF0000"), Err(DataError::BadMagic(_))));
        assert!(matches!(parse_midi(b"MT"), Err(DataError::BadMagic(_))));
        let mut bytes = smf0(96, &[0x00, 0x90, 60, 100, 0x00, 0xff, 0x2f, 0x00]);
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(parse_midi(&bytes), Err(DataError::Truncated(_))));
    }

    #[test]
    fn format1_tempo_track_applies_to_all_tracks() {
        let mut bytes = b"MThd".to_vec();
        bytes.extend_from_slice(&[0, 0, 0, 6, 0, 1, 0, 2, 0, 100]);
        // track 0: tempo 60 BPM
        let t0 = [0x00, 0xff, 0x51, 0x03, 0x0f, 0x42, 0x40, 0x00, 0xff, 0x2f, 0x00];
        // track 1: notes at tick 0 and 100
        let t1 = [0x00, 0x90, 72, 80, 0x64, 0x90, 48, 80, 0x00, 0xff, 0x2f, 0x00];
        for t in [&t0[..], &t1[..]] {
            bytes.extend_from_slice(b"MTrk");
            bytes.extend_from_slice(&(t.len() as u32).to_be_bytes());
            bytes.extend_from_slice(t);
        }
        let seq = parse_midi(&bytes).unwrap();
        assert_eq!(seq.keys(), vec![51, 27]);
        assert!((seq.notes()[1].onset - 1.0).abs() < 1e-12);
    }

    #[test]
    fn writer_round_trips_through_parser() {
        let notes = [
            MidiNote { pitch: 60, velocity: 80, start_tick: 0, end_tick: 200 },
            MidiNote { pitch: 64, velocity: 80, start_tick: 0, end_tick: 200 },
            MidiNote { pitch: 67, velocity: 80, start_tick: 300, end_tick: 400 },
            MidiNote { pitch: 72, velocity: 80, start_tick: 20_000, end_tick: 20_100 },
        ];
        let bytes = write_midi(&notes, 480, &[(0, 120.0), (10_000, 90.0)]);
        let seq = parse_midi(&bytes).unwrap();
        assert_eq!(seq.keys(), vec![39, 43, 46, 51]);
        let spt_fast = 0.5 / 480.0;
        let spt_slow = (60.0 / 90.0) / 480.0;
        let last = 10_000.0 * spt_fast + 10_000.0 * spt_slow;
        assert!((seq.notes()[2].onset - 300.0 * spt_fast).abs() < 1e-9);
        // Tempo is stored as whole microseconds per quarter.
        assert!((seq.notes()[3].onset - last).abs() < 1e-4);
    }
}
