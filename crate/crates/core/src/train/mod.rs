//! Training setups, pretraining schedules and the optimization loop.

mod optim;
mod run;
mod translate;
mod views;

pub use optim::{adamw_step, adamw_update, AdamState, AdamWConfig};
pub use run::{
    read_translation_pairs, train, train_with, write_history_csv, HistoryEntry, ModelShape, RunConfig, RunPaths, TrainConfig,
};
pub use translate::{DictionaryTranslator, TranslateError, Translator};
pub use views::{
    build_pretrain_plan, build_view, translate_source_facts, Example, Phase, PretrainPlan, Setup, Task,
    TranslationPair,
};

use thiserror::Error;

use crate::linearize::LinearizeError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("language {0:?} does not occur in the corpus")]
    LanguageAbsent(String),
    #[error("setup {0} requires a translator")]
    MissingTranslator(&'static str),
    #[error("pretraining plan {0} requires translation pairs")]
    MissingTranslationPairs(&'static str),
    #[error("pretraining plan {plan} has no data: {reason}")]
    NoPretrainData { plan: &'static str, reason: String },
    #[error("training view is empty")]
    EmptyView,
    #[error("non-finite loss in phase {phase}, epoch {epoch}, batch {batch}")]
    NonFinite { phase: String, epoch: usize, batch: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Translate(#[from] TranslateError),
    #[error(transparent)]
    Linearize(#[from] LinearizeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Io(String),
}
