//! Corpus ingestion: Standard MIDI Files in, monophonic note streams and
//! fixed-length training windows out.

mod ingest;
mod midi;
mod sequence;
mod shard;
mod split;
mod synthetic;
mod window;

pub use ingest::{ingest_dir, shard_file, shard_stats, IngestSummary, ShardStats, SplitStats, MANIFEST_FILE};
pub use midi::{parse_midi, write_midi, MidiNote};
pub use sequence::{
    dt_bucket, flatten_order, Note, NoteSequence, FIRST_NOTE_DT_BUCKET, MIDI_PITCH_OFFSET,
    NUM_DT_BUCKETS, NUM_KEYS,
};
pub use shard::{decode_shard, encode_shard, read_shard, write_shard, SHARD_MAGIC, SHARD_VERSION};
pub use split::{read_manifest, split_corpus, write_manifest, CorpusSplit, Split};
pub use synthetic::{contour_fragments, to_midi_notes, two_melodies};
pub use window::{sample_window, valid_shifts, window_at, TrainingExample, TRANSPOSE_RANGE};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("not a Standard MIDI File: {0}")]
    BadMagic(String),
    #[error("truncated MIDI data: {0}")]
    Truncated(&'static str),
    #[error("malformed MIDI data: {0}")]
    Malformed(String),
    #[error("negative time delta {0}")]
    NegativeDelta(f64),
    #[error("sequence `{id}` has {len} notes, window needs {window}")]
    TooShort { id: String, len: usize, window: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("bad shard file: {0}")]
    Shard(String),
    #[error("bad manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
