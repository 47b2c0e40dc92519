use std::fmt;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tracing::warn;

use super::midi::parse_midi;
use super::sequence::NoteSequence;
use super::shard::{read_shard, write_shard};
use super::split::{split_corpus, write_manifest, Split};
use super::window::{sample_window, window_at, TrainingExample};
use super::DataError;

pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn shard_file(split: Split) -> String {
    format!("{}.pgsd", split.as_str())
}

#[derive(Clone, Debug, Default)]
pub struct IngestSummary {
    pub files_parsed: usize,
    pub failures: Vec<(String, String)>,
    pub too_short: usize,
    pub windows: [usize; 3],
}

fn collect_midi(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), DataError> {
    let entries = std::fs::read_dir(dir).map_err(|e| DataError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| DataError::io(dir, e))?.path();
        if path.is_dir() {
            collect_midi(root, &path, out)?;
        } else if path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
        {
            out.push(path.strip_prefix(root).unwrap_or(&path).to_path_buf());
        }
    }
    Ok(())
}

/// Parses every `.mid`/`.midi` under `dir`, splits the corpus 8:1:1 and
/// writes `train/validation/test.pgsd` plus the split manifest to `out`.
///
/// Training windows are randomly placed and transposed, `len / window` per
/// piece (at least one). Validation and test windows tile each piece without
/// overlap or transposition so evaluation is stable.
pub fn ingest_dir(dir: &Path, out: &Path, window: usize, seed: u64) -> Result<IngestSummary, DataError> {
    let mut files = Vec::new();
    collect_midi(dir, dir, &mut files)?;
    files.sort();

    let mut summary = IngestSummary::default();
    let mut sequences = Vec::new();
    for rel in files {
        let id = rel.to_string_lossy().replace('\\', "/");
        let bytes = std::fs::read(dir.join(&rel)).map_err(|e| DataError::io(dir.join(&rel), e))?;
        match parse_midi(&bytes) {
            Ok(mut seq) => {
                summary.files_parsed += 1;
                seq.source_id = id;
                if seq.len() >= window {
                    sequences.push(seq);
                } else {
                    summary.too_short += 1;
                }
            }
            Err(err) => {
                warn!(file = %id, %err, "skipping unparseable MIDI file");
                summary.failures.push((id, err.to_string()));
            }
        }
    }

    let ids: Vec<&str> = sequences.iter().map(|s| s.source_id.as_str()).collect();
    let split = split_corpus(&ids, seed)?;
    std::fs::create_dir_all(out).map_err(|e| DataError::io(out, e))?;
    std::fs::write(out.join(MANIFEST_FILE), write_manifest(&split)).map_err(|e| DataError::io(out.join(MANIFEST_FILE), e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (slot, part) in Split::ALL.into_iter().enumerate() {
        let members = split.get(part);
        let mut examples: Vec<TrainingExample> = Vec::new();
        for seq in sequences.iter().filter(|s| members.contains(&s.source_id)) {
            examples.extend(windows_for(seq, part, window, &mut rng)?);
        }
        summary.windows[slot] = examples.len();
        write_shard(out.join(shard_file(part)), window, &examples)?;
    }
    Ok(summary)
}

fn windows_for(seq: &NoteSequence, part: Split, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TrainingExample>, DataError> {
    match part {
        Split::Train => (0..(seq.len() / n).max(1)).map(|_| sample_window(seq, n, rng)).collect(),
        Split::Validation | Split::Test => (0..seq.len() / n).map(|k| window_at(seq, k * n, n, 0)).collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitStats {
    pub split: Split,
    pub windows: usize,
    pub window_len: usize,
    pub key_range: Option<(u8, u8)>,
    pub mean_dt_bucket: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShardStats {
    pub splits: Vec<SplitStats>,
}

/// Summarizes whichever split shards exist in `dir`.
pub fn shard_stats(dir: &Path) -> Result<ShardStats, DataError> {
    let mut splits = Vec::new();
    for part in Split::ALL {
        let path = dir.join(shard_file(part));
        if !path.exists() {
            continue;
        }
        let (n, examples) = read_shard(&path)?;
        let keys = examples.iter().flat_map(|e| e.keys.iter().copied());
        let key_range = keys.clone().min().zip(keys.max());
        let total: usize = examples.iter().map(|e| e.len()).sum();
        let dt_sum: u64 = examples.iter().flat_map(|e| e.dt_buckets.iter()).map(|&d| u64::from(d)).sum();
        splits.push(SplitStats {
            split: part,
            windows: examples.len(),
            window_len: n,
            key_range,
            mean_dt_bucket: (total > 0).then(|| dt_sum as f64 / total as f64),
        });
    }
    if splits.is_empty() {
        return Err(DataError::Shard(format!("no shards found in {}", dir.display())));
    }
    Ok(ShardStats { splits })
}

impl fmt::Display for ShardStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<11} {:>8} {:>6} {:>10} {:>8}", "split", "windows", "n", "keys", "mean ΔT")?;
        for s in &self.splits {
            let keys = s.key_range.map_or("-".to_string(), |(lo, hi)| format!("{lo}..={hi}"));
            let dt = s.mean_dt_bucket.map_or("-".to_string(), |d| format!("{d:.2}"));
            writeln!(f, "{:<11} {:>8} {:>6} {:>10} {:>8}", s.split.as_str(), s.windows, s.window_len, keys, dt)?;
        }
        Ok(())
    }
}
