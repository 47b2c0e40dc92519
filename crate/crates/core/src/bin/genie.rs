use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use piano_genie::data::{ingest_dir, read_shard, shard_file, shard_stats, Split};
use piano_genie::model::load_checkpoint;
use piano_genie::service::{serve, ServeOptions};
use piano_genie::train::{
    eval_cvr, eval_gold, eval_ppl, report, report_jsonl, train_from_shards, CvrMode, EvalReport, GoldMode, GoldSet,
    TrainRunConfig, BEST_CHECKPOINT,
};

#[derive(Parser)]
#[command(name = "genie", version, about = "Eight-button piano improvisation model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus ingestion and inspection.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
    /// Train a model from shards.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test split and gold melodies.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        gold: Option<PathBuf>,
        /// Count only strictly opposed signs as contour violations.
        #[arg(long)]
        strict_cvr: bool,
        /// Compare raw encoder output instead of quantized buttons.
        #[arg(long)]
        raw_gold: bool,
        #[arg(long)]
        json: bool,
    },
    /// Serve a checkpoint over WebSocket.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        bind: SocketAddr,
        #[arg(long, default_value_t = 0.25)]
        temperature: f64,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DataCommand {
    /// Parse MIDI files under <dir>, split 8:1:1 and write window shards.
    Ingest {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        window: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize the shards in <shard-dir>.
    Stats { shard_dir: PathBuf },
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();

    match Cli::parse().command {
        Command::Data { command: DataCommand::Ingest { dir, out, window, seed } } => {
            let summary = ingest_dir(&dir, &out, window, seed)?;
            println!(
                "parsed {} files ({} failed, {} shorter than {window} notes)",
                summary.files_parsed,
                summary.failures.len(),
                summary.too_short
            );
            for (split, n) in Split::ALL.iter().zip(summary.windows) {
                println!("{split}: {n} windows");
            }
        }
        Command::Data { command: DataCommand::Stats { shard_dir } } => print!("{}", shard_stats(&shard_dir)?),
        Command::Train { config, data, out } => {
            let config = TrainRunConfig::load(&config)?;
            let outcome = train_from_shards(&config, &data, &out)?;
            println!(
                "stopped after {} steps ({:?}); best step {} with validation PPL {}",
                outcome.steps_run,
                outcome.stop,
                outcome.best_step,
                outcome.best_val_recons.map_or("-".into(), |v| format!("{:.3}", v.exp()))
            );
            println!("checkpoint: {}", out.join(BEST_CHECKPOINT).display());
        }
        Command::Eval { ckpt, data, gold, strict_cvr, raw_gold, json } => {
            let (header, model) = load_checkpoint(&ckpt)?;
            let (_, test) = read_shard(data.join(shard_file(Split::Test))).context("reading test shard")?;
            let encoder = model.config.has_encoder();
            let cvr_mode = if strict_cvr { CvrMode::Strict } else { CvrMode::Literal };
            let gold_mode = if raw_gold { GoldMode::Raw } else { GoldMode::Quantized };
            let melodies = match gold {
                Some(path) => GoldSet::load(&path)?,
                None => GoldSet::builtin(),
            };
            let row = EvalReport {
                name: ckpt.file_name().map_or_else(|| ckpt.display().to_string(), |n| n.to_string_lossy().into_owned()),
                step: header.step,
                ppl: eval_ppl(&model, &test, 64)?,
                cvr: encoder.then(|| eval_cvr(&model, &test, cvr_mode)).transpose()?,
                gold_mse: encoder.then(|| eval_gold(&model, &melodies.melodies, gold_mode)).transpose()?,
            };
            if json {
                print!("{}", report_jsonl(&[row]));
            } else {
                print!("{}", report(&[row]));
            }
        }
        Command::Serve { ckpt, bind, temperature, static_dir } => {
            let options = ServeOptions { temperature, static_dir, ..ServeOptions::new(ckpt, bind) };
            tokio::runtime::Runtime::new()?.block_on(serve(options))?;
        }
    }
    Ok(())
}
