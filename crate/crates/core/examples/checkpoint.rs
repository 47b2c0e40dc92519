//! Save a model, inspect the checkpoint header and load it back.
//!
//!     cargo run --example checkpoint

use piano_genie::model::{load_checkpoint, save_checkpoint, GenieModel, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let model = GenieModel::<f32>::init(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(0))?;
    let dir = std::env::temp_dir().join("genie-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.pgck");
    save_checkpoint(&path, &model, Some(0))?;

    let bytes = std::fs::read(&path)?;
    let header_end = bytes.iter().enumerate().filter(|(_, &b)| b == b'\n').nth(1).map_or(0, |(i, _)| i);
    println!("{} bytes; header:\n{}", bytes.len(), String::from_utf8_lossy(&bytes[..header_end]).chars().take(400).collect::<String>());

    let (header, loaded) = load_checkpoint(&path)?;
    println!("\n{} tensors, {} parameters, crc32 {:08x}", header.params.len(), loaded.params.numel(), header.crc32);
    assert!(loaded.params.values().iter().zip(model.params.values()).all(|(a, b)| a == b));
    println!("round trip is bit-exact");
    Ok(())
}
