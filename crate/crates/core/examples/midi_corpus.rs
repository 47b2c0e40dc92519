//! Write a synthetic MIDI corpus, ingest it into window shards and print
//! the shard statistics.
//!
//!     cargo run --example midi_corpus -- [out-dir]

use piano_genie::data::{contour_fragments, ingest_dir, parse_midi, shard_stats, to_midi_notes, write_midi};

fn main() -> anyhow::Result<()> {
    let root = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("genie-midi-corpus"), Into::into);
    let midi = root.join("midi");
    std::fs::create_dir_all(&midi)?;
    for seq in contour_fragments(40, 200, 1) {
        let bytes = write_midi(&to_midi_notes(&seq), 480, &[(0, 120.0)]);
        std::fs::write(midi.join(format!("{}.mid", seq.source_id)), bytes)?;
    }

    let first = std::fs::read(midi.join("fragment-0000.mid"))?;
    let seq = parse_midi(&first)?;
    println!("fragment-0000: {} notes, first keys {:?}", seq.len(), &seq.keys()[..12]);

    let shards = root.join("shards");
    let summary = ingest_dir(&midi, &shards, 128, 0)?;
    println!("parsed {} files, windows per split {:?}", summary.files_parsed, summary.windows);
    print!("{}", shard_stats(&shards)?);
    Ok(())
}
