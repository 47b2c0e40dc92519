//! Drive a decoder session by hand: presses, a chord, lookahead, reset.
//! Uses a checkpoint when given one, otherwise an untrained model.
//!
//!     cargo run --release --example live_session -- [checkpoint]

use piano_genie::engine::{DecoderSession, DecoderWeights, NoteKind};
use piano_genie::model::{load_checkpoint, GenieModel, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const NAMES: [&str; 12] = ["A", "A#", "B", "C", "C#", "D", "D#", "E", "F", "F#", "G", "G#"];

fn name(key: u8) -> String {
    format!("{}{}", NAMES[key as usize % 12], (key as usize + 9) / 12)
}

fn main() -> anyhow::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(path) => load_checkpoint(std::path::Path::new(&path))?.1,
        None => GenieModel::<f32>::init(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(0))?,
    };
    let mut session = DecoderSession::new(DecoderWeights::from_model(&model)?, 0.25, 7)?;

    let mut t = 0.0;
    for button in [0u8, 1, 2, 3, 4, 5, 6, 7, 7, 3] {
        for e in session.press(button, t)? {
            let verb = if e.kind == NoteKind::On { "on " } else { "off" };
            println!("{t:5.2}s button {button} {verb} {}", name(e.key));
        }
        if let Some(off) = session.release(button, t + 0.2)? {
            println!("{:5.2}s button {button} off {}", off.time, name(off.key));
        }
        t += 0.3;
    }

    for b in [0u8, 2, 4] {
        session.press(b, t)?;
    }
    println!("\nchord held: {:?}", session.held().values().map(|&k| name(k)).collect::<Vec<_>>());

    let probs = session.lookahead()?;
    for (b, row) in probs.rows().into_iter().enumerate() {
        let (k, p) = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("88 keys");
        println!("next press of button {b}: most likely {} (p = {p:.3})", name(k as u8));
    }
    println!("reset releases {} notes", session.reset().len());
    Ok(())
}
