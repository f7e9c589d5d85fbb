//! Text generation from linearized sources.

use crate::exec::ExecMode;
use crate::linearize::{LinearizedInput, Vocabulary};
use crate::model::{beam_decode, BeamConfig, EncodedSource, ModelError, ModelParams};

/// Best beam hypothesis decoded to text. `max_len` is capped so the decoder input
/// (⟨BOS⟩ plus the prefix) never exceeds the position table.
pub fn generate(
    params: &ModelParams,
    vocab: &Vocabulary,
    source: &LinearizedInput,
    cfg: &BeamConfig,
) -> Result<String, ModelError> {
    let enc = EncodedSource::new(params, source)?;
    let cfg = BeamConfig { max_len: cfg.max_len.min(params.config.max_positions), ..*cfg };
    let hyps = beam_decode(&enc, &cfg)?;
    Ok(hyps.first().map(|h| vocab.decode(&h.tokens)).unwrap_or_default())
}

/// One output per source, in input order.
pub fn generate_batch(
    params: &ModelParams,
    vocab: &Vocabulary,
    sources: &[LinearizedInput],
    cfg: &BeamConfig,
    exec: ExecMode,
) -> Result<Vec<String>, ModelError> {
    exec.map(sources, |_, s| generate(params, vocab, s, cfg)).into_iter().collect()
}
