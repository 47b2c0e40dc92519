//! Time `press()` on a full-size decoder.
//!
//!     cargo run --release --example latency -- [presses]

use piano_genie::engine::{bench_press, DecoderWeights};
use piano_genie::model::{GenieModel, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let presses = std::env::args().nth(1).map_or(Ok(1000), |s| s.parse())?;
    for use_dt in [false, true] {
        let config = ModelConfig { use_dt, ..ModelConfig::default() };
        let model = GenieModel::<f32>::init(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let s = bench_press(DecoderWeights::from_model(&model)?, presses, 1)?;
        println!(
            "2x128{}: {} presses, p50 {:.3} ms, p99 {:.3} ms, max {:.3} ms",
            if use_dt { " +dT" } else { "" },
            s.count,
            s.p50_ms,
            s.p99_ms,
            s.max_ms
        );
    }
    Ok(())
}
