use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::GenieModel;
use super::ModelError;
use crate::nn::{ParamStore, Scalar};

/// First line of every checkpoint file.
pub const CHECKPOINT_MAGIC: &str = "PGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into the blob.
    pub offset: usize,
}

/// JSON header on the second line; the little-endian f32 blob follows it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: ModelConfig,
    pub params: Vec<ParamEntry>,
    pub blob_len: usize,
    pub crc32: u32,
    /// Training step the weights were taken at, if known.
    #[serde(default)]
    pub step: Option<u64>,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

/// Serializes `model` as `PGCK 1\n{header}\n{blob}`. Weights are stored as
/// f32 regardless of `F`.
pub fn write_checkpoint<F: Scalar>(model: &GenieModel<F>, step: Option<u64>) -> Vec<u8> {
    let mut blob = Vec::with_capacity(model.params.numel() * 4);
    let mut params = Vec::with_capacity(model.params.len());
    for (name, value) in model.params.iter() {
        params.push(ParamEntry {
            name: name.to_string(),
            shape: [value.nrows(), value.ncols()],
            offset: blob.len(),
        });
        for v in value.iter() {
            blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        params,
        blob_len: blob.len(),
        crc32: crc32fast::hash(&blob),
        step,
    };
    let mut out = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n").into_bytes();
    out.extend(serde_json::to_vec(&header).expect("header serializes"));
    out.push(b'\n');
    out.extend(blob);
    out
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let nl = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..nl], &bytes[nl + 1..]))
}

/// Parses and validates a checkpoint: magic, version, checksum, and that the
/// parameter manifest matches the layout the stored config implies.
pub fn read_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, GenieModel<f32>), ModelError> {
    let (first, rest) = split_line(bytes).ok_or_else(|| bad("missing magic line"))?;
    let first = std::str::from_utf8(first).map_err(|_| bad("magic line is not text"))?;
    let mut words = first.split(' ');
    if words.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad(format!("bad magic `{first}`")));
    }
    let version: u32 = words
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad(format!("bad version in `{first}`")))?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported format version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let (header, blob) = split_line(rest).ok_or_else(|| bad("missing header line"))?;
    let header: CheckpointHeader = serde_json::from_slice(header).map_err(|e| bad(format!("header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(bad(format!("header format version {} does not match", header.format_version)));
    }
    if blob.len() != header.blob_len {
        return Err(bad(format!("blob is {} bytes, header says {}", blob.len(), header.blob_len)));
    }
    let crc = crc32fast::hash(blob);
    if crc != header.crc32 {
        return Err(bad(format!("checksum mismatch: stored {:08x}, computed {crc:08x}", header.crc32)));
    }

    let mut store = ParamStore::new();
    for entry in &header.params {
        let [rows, cols] = entry.shape;
        let end = entry.offset + rows * cols * 4;
        if end > blob.len() || store.id(&entry.name).is_some() {
            return Err(bad(format!("parameter `{}` has an invalid manifest entry", entry.name)));
        }
        let values: Vec<f32> = blob[entry.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("parameter `{}` has non-finite values", entry.name)));
        }
        store.insert(entry.name.clone(), Array2::from_shape_vec((rows, cols), values).expect("length checked"));
    }
    let model = GenieModel::from_params(header.config.clone(), store)?;
    Ok((header, model))
}

pub fn save_checkpoint<F: Scalar>(path: &Path, model: &GenieModel<F>, step: Option<u64>) -> Result<(), ModelError> {
    let io = |source| ModelError::Io { path: path.display().to_string(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, write_checkpoint(model, step)).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, GenieModel<f32>), ModelError> {
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
    read_checkpoint(&bytes)
}
