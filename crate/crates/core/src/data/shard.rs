//! Flat binary shard of training windows.
//!
//! ```text
//! "PGSD" | version u32 | n u32 | count u32      (little-endian)
//! count × ( n key bytes | n ΔT-bucket bytes )
//! ```

use std::path::Path;

use super::sequence::{NUM_DT_BUCKETS, NUM_KEYS};
use super::window::TrainingExample;
use super::DataError;

pub const SHARD_MAGIC: &[u8; 4] = b"PGSD";
pub const SHARD_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn encode_shard(n: usize, examples: &[TrainingExample]) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::with_capacity(HEADER_LEN + examples.len() * 2 * n);
    out.extend_from_slice(SHARD_MAGIC);
    out.extend_from_slice(&SHARD_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(examples.len() as u32).to_le_bytes());
    for ex in examples {
        if ex.keys.len() != n || ex.dt_buckets.len() != n {
            return Err(DataError::Shard(format!("record of length {} in a shard of n = {n}", ex.keys.len())));
        }
        out.extend_from_slice(&ex.keys);
        out.extend_from_slice(&ex.dt_buckets);
    }
    Ok(out)
}

/// Decodes a shard. Transpositions are not stored and come back as 0.
pub fn decode_shard(bytes: &[u8]) -> Result<(usize, Vec<TrainingExample>), DataError> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != SHARD_MAGIC {
        return Err(DataError::Shard("missing PGSD header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let version = word(4) as u32;
    if version != SHARD_VERSION {
        return Err(DataError::Shard(format!("unsupported version {version}")));
    }
    let (n, count) = (word(8), word(12));
    let body = &bytes[HEADER_LEN..];
    if n == 0 || body.len() != count * 2 * n {
        return Err(DataError::Shard(format!(
            "expected {count} records of {} bytes, found {} body bytes",
            2 * n,
            body.len()
        )));
    }
    let examples = body
        .chunks_exact(2 * n)
        .map(|rec| {
            let (keys, dts) = rec.split_at(n);
            if keys.iter().any(|&k| k as usize >= NUM_KEYS) || dts.iter().any(|&d| d as usize >= NUM_DT_BUCKETS) {
                return Err(DataError::Shard("key or ΔT bucket out of range".into()));
            }
            Ok(TrainingExample {
                keys: keys.to_vec(),
                dt_buckets: dts.to_vec(),
                transpose: 0,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((n, examples))
}

pub fn write_shard(path: impl AsRef<Path>, n: usize, examples: &[TrainingExample]) -> Result<(), DataError> {
    let bytes = encode_shard(n, examples)?;
    std::fs::write(path.as_ref(), bytes).map_err(|e| DataError::io(path, e))
}

pub fn read_shard(path: impl AsRef<Path>) -> Result<(usize, Vec<TrainingExample>), DataError> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| DataError::io(path, e))?;
    decode_shard(&bytes)
}
