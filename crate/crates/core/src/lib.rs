//! Cross-lingual fact-to-text generation at desk scale.
//!
//! The crate covers the whole pipeline:
//!
//! * [`facts`]: fact triples, corpus instances, JSONL corpus I/O, validation and statistics.
//! * [`linearize`]: structure-aware linearization of fact sets with per-token role ids,
//!   the inverse parser and a word-level vocabulary.
//! * [`model`]: a micro encoder-decoder transformer with fact-aware role embeddings,
//!   a small reverse-mode autodiff tape and beam search.
//! * [`train`]: training-setup views, pretraining schedules, AdamW and the training loop.
//! * [`metrics`]: corpus BLEU, chrF++ and an exact-match METEOR variant.
//! * [`align`]: two-stage fact-sentence alignment with pluggable entailment scorers.
//! * [`synth`]: a deterministic synthetic corpus over toy languages.
//!
//! Batch-level work (per-example gradients, evaluation, alignment) runs on rayon when the
//! `parallel` feature is enabled and falls back to plain iterators otherwise; see [`exec`].

pub mod align;
pub mod error;
pub mod exec;
pub mod facts;
pub mod generate;
pub mod linearize;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
