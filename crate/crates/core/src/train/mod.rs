//! Training loop with early stopping, checkpointing, and the evaluation
//! suite: perplexity, contour violation ratio and Gold MSE.

mod compare;
mod config;
mod eval;
mod report;
mod trainer;

pub use compare::{compare, synthetic_corpus, table_variants, Compared, DeskScale, SyntheticCorpus, Variant};
pub use config::TrainRunConfig;
pub use eval::{
    contour_violations, eval_cvr, eval_gold, eval_ppl, mean_recons, CvrMode, GoldMelody, GoldMode, GoldSet,
};
pub use report::{report, report_jsonl, EvalReport};
pub use trainer::{train, train_from_shards, LogRecord, RunOutput, StopReason, TrainOutcome, BEST_CHECKPOINT, TRAIN_LOG};

use thiserror::Error;

use crate::data::DataError;
use crate::model::ModelError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no {0} data")]
    EmptyData(&'static str),
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: u64, detail: String },
    #[error("model has no encoder")]
    NoEncoder,
    #[error("bad gold fixture: {0}")]
    Gold(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<NnError> for TrainError {
    fn from(e: NnError) -> Self {
        TrainError::Model(ModelError::Nn(e))
    }
}

impl TrainError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        TrainError::Io { path: path.as_ref().display().to_string(), source }
    }
}
