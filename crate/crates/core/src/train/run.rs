use std::io::{BufRead, Write};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{adamw_step, AdamState, AdamWConfig};
use super::views::{Example, Phase, PretrainPlan, Setup, TranslationPair};
use super::TrainError;
use crate::exec::ExecMode;
use crate::model::{loss_and_grads_with, Batch, Mode, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub epochs_finetune: usize,
    pub epochs_pretrain: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-5,
            weight_decay: 0.001,
            batch_size: 20,
            dropout: 0.1,
            epochs_finetune: 30,
            epochs_pretrain: 7,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate >= 0.0 && self.weight_decay >= 0.0) {
            return Err(TrainError::Config("learning rate and weight decay must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub epoch: usize,
    pub phase: String,
    pub mean_loss: f64,
}

pub fn write_history_csv<W: Write>(history: &[HistoryEntry], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epoch,phase,mean_loss")?;
    for h in history {
        writeln!(w, "{},{},{}", h.epoch, h.phase, h.mean_loss)?;
    }
    Ok(())
}

fn mix(seed: u64, a: u64, b: u64, c: u64) -> u64 {
    let mut x = seed ^ 0x243F_6A88_85A3_08D3;
    for v in [a, b, c] {
        x = (x ^ v).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(29);
    }
    x
}

#[allow(clippy::too_many_arguments)]
fn run_phase(
    params: &mut ModelParams,
    phase_idx: usize,
    name: &str,
    examples: &[Example],
    epochs: usize,
    cfg: &TrainConfig,
    exec: ExecMode,
    history: &mut Vec<HistoryEntry>,
    on_epoch: &mut dyn FnMut(&HistoryEntry),
) -> Result<(), TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyView);
    }
    let adamw = cfg.adamw();
    let mut state = AdamState::new(&params.tensors);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 1..=epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, phase_idx as u64, epoch as u64, 0));
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = Batch::from_pairs(chunk.iter().map(|&i| (&examples[i].source, examples[i].target.as_slice())));
            let mode = Mode::Train { seed: mix(cfg.seed, phase_idx as u64, epoch as u64, b as u64 + 1) };
            let (loss, grads) = loss_and_grads_with(params, &batch, mode, exec)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { phase: name.to_string(), epoch, batch: b });
            }
            adamw_step(params, &grads, &mut state, &adamw)?;
            losses.push(loss);
        }
        let entry = HistoryEntry {
            epoch,
            phase: name.to_string(),
            mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
        };
        on_epoch(&entry);
        history.push(entry);
    }
    Ok(())
}

/// Runs every pretraining phase for its epoch count, then finetunes for `epochs_finetune`.
/// Optimizer state starts fresh in each phase.
pub fn train(
    params: ModelParams,
    phases: &[Phase],
    finetune: &[Example],
    config: &TrainConfig,
) -> Result<(ModelParams, Vec<HistoryEntry>), TrainError> {
    train_with(params, phases, finetune, config, ExecMode::Parallel, &mut |_| {})
}

pub fn train_with(
    mut params: ModelParams,
    phases: &[Phase],
    finetune: &[Example],
    config: &TrainConfig,
    exec: ExecMode,
    on_epoch: &mut dyn FnMut(&HistoryEntry),
) -> Result<(ModelParams, Vec<HistoryEntry>), TrainError> {
    config.validate()?;
    if finetune.is_empty() {
        return Err(TrainError::EmptyView);
    }
    params.config.dropout_rate = config.dropout;
    let mut history = Vec::new();
    for (i, p) in phases.iter().enumerate() {
        run_phase(&mut params, i, &p.name, &p.examples, p.epochs, config, exec, &mut history, on_epoch)?;
    }
    run_phase(&mut params, phases.len(), "finetune", finetune, config.epochs_finetune, config, exec, &mut history, on_epoch)?;
    Ok((params, history))
}

/// Architecture knobs a run config may set; the vocabulary size comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelShape {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub max_positions: usize,
    pub use_role_embeddings: bool,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 256,
            max_positions: 128,
            use_role_embeddings: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPaths {
    pub train_corpus: PathBuf,
    #[serde(default)]
    pub pretrain_corpus: Option<PathBuf>,
    #[serde(default)]
    pub translation_pairs: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub vocab: PathBuf,
    pub history: PathBuf,
}

/// Run configuration file (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub setup: Setup,
    #[serde(default = "default_plan")]
    pub pretrain_plan: PretrainPlan,
    #[serde(default)]
    pub hyperparameters: TrainConfig,
    #[serde(default)]
    pub model: ModelShape,
    pub seed: u64,
    pub paths: RunPaths,
    #[serde(default = "default_english")]
    pub english: String,
    #[serde(default = "default_max_vocab")]
    pub max_vocab: usize,
}

fn default_plan() -> PretrainPlan {
    PretrainPlan::None
}

fn default_english() -> String {
    "en".into()
}

fn default_max_vocab() -> usize {
    8000
}

/// Translation pairs as JSONL `{"source", "target", "language"}`.
pub fn read_translation_pairs<R: BufRead>(r: R) -> Result<Vec<TranslationPair>, TrainError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| TrainError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| TrainError::Io(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}
