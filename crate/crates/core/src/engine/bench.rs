use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::session::{DecoderSession, DecoderWeights, DEFAULT_TEMPERATURE, NUM_BUTTONS};
use super::EngineError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

/// Nearest-rank percentile of `sorted`, `q` in `[0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Summary of latencies in milliseconds; `None` when there are none.
pub fn summarize_latencies(samples_ms: &[f64]) -> Option<LatencySummary> {
    if samples_ms.is_empty() {
        return None;
    }
    let mut sorted = samples_ms.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(LatencySummary {
        count: sorted.len(),
        p50_ms: percentile(&sorted, 0.5),
        p99_ms: percentile(&sorted, 0.99),
        max_ms: *sorted.last().expect("non-empty"),
    })
}

/// Times `presses` random press/release pairs on one session at the default
/// temperature, measuring only `press`.
pub fn bench_press(weights: Arc<DecoderWeights>, presses: usize, seed: u64) -> Result<LatencySummary, EngineError> {
    let mut session = DecoderSession::new(weights, DEFAULT_TEMPERATURE, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    // warm caches and the allocator before timing
    for i in 0..10 {
        session.press((i % NUM_BUTTONS) as u8, i as f64 * 0.1)?;
    }
    session.reset();
    let mut samples = Vec::with_capacity(presses);
    for i in 0..presses {
        let button = rng.random_range(0..NUM_BUTTONS as u8);
        let t = i as f64 * 0.12;
        let start = Instant::now();
        session.press(button, t)?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
        session.release(button, t + 0.05)?;
    }
    summarize_latencies(&samples).ok_or(EngineError::InvalidArgument("presses must be positive".into()))
}
