use thiserror::Error;

use crate::align::AlignError;
use crate::facts::CorpusError;
use crate::linearize::LinearizeError;
use crate::metrics::MetricError;
use crate::model::ModelError;
use crate::synth::SynthError;
use crate::train::TrainError;

/// Any error the toolkit can produce.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Linearize(#[from] LinearizeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
