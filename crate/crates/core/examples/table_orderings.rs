//! Train the language model, VQ-VAE, and IQAE with and without the contour
//! term on one synthetic corpus and print PPL / CVR / Gold side by side.
//!
//!     cargo run --release --example table_orderings -- [steps] [hidden] [variant]

use piano_genie::model::ModelConfig;
use piano_genie::train::{compare, report, synthetic_corpus, table_variants, DeskScale, GoldSet};

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt().with_env_filter("info").init();
    let mut args = std::env::args().skip(1);
    let mut desk = DeskScale::default();
    if let Some(steps) = args.next() {
        desk.steps = steps.parse()?;
    }
    if let Some(hidden) = args.next() {
        desk.hidden_size = hidden.parse()?;
    }
    let only = args.next();
    let variants: Vec<_> = table_variants(&ModelConfig::default())
        .into_iter()
        .filter(|v| only.as_ref().is_none_or(|o| v.name.eq_ignore_ascii_case(o)))
        .collect();
    let corpus = synthetic_corpus(desk.pieces, desk.piece_len, desk.window_n, desk.seed)?;
    println!(
        "corpus: {} train / {} validation / {} test windows of {}",
        corpus.train.len(),
        corpus.validation.len(),
        corpus.test.len(),
        desk.window_n
    );
    let start = std::time::Instant::now();
    let results = compare(&desk, &variants, &corpus, &GoldSet::builtin().melodies)?;
    let rows: Vec<_> = results.into_iter().map(|c| c.report).collect();
    print!("{}", report(&rows));
    println!("total {:.0} s", start.elapsed().as_secs_f64());
    Ok(())
}
