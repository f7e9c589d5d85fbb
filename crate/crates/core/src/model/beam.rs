//! Length-normalized beam search over any next-token scorer.

use std::cmp::Ordering;

use super::transformer::EncodedSource;
use super::ModelError;
use crate::linearize::EOS_ID;

/// Anything that yields next-token log-probabilities for a generated prefix.
pub trait StepScorer {
    fn next_log_probs(&self, prefix: &[u32]) -> Vec<f64>;
}

impl StepScorer for EncodedSource<'_> {
    fn next_log_probs(&self, prefix: &[u32]) -> Vec<f64> {
        EncodedSource::next_log_probs(self, prefix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub width: usize,
    /// Maximum number of generated tokens, counting ⟨EOS⟩.
    pub max_len: usize,
    /// Scores are `log_prob / length^exponent`.
    pub length_norm_exponent: f64,
    pub eos: u32,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig { width: 4, max_len: 64, length_norm_exponent: 1.0, eos: EOS_ID }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens without the trailing ⟨EOS⟩.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub score: f64,
    /// False when decoding stopped at `max_len` without ⟨EOS⟩.
    pub finished: bool,
}

impl Hypothesis {
    fn new(tokens: Vec<u32>, log_prob: f64, finished: bool, exponent: f64) -> Self {
        let len = tokens.len() + usize::from(finished);
        let score = log_prob / (len.max(1) as f64).powf(exponent);
        Hypothesis { tokens, log_prob, score, finished }
    }
}

/// Ranking: higher score first, then shorter, then lexicographic token order.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.tokens.len().cmp(&b.tokens.len()))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Beam search keeping the `width` best partial sequences by cumulative log-probability.
/// Sequences that emit ⟨EOS⟩ leave the beam; decoding stops when the beam is empty or after
/// `max_len` steps. Returns every finished (and truncated) hypothesis, best first.
pub fn beam_decode<S: StepScorer + ?Sized>(scorer: &S, cfg: &BeamConfig) -> Result<Vec<Hypothesis>, ModelError> {
    if cfg.width == 0 {
        return Err(ModelError::ZeroWidth);
    }
    let mut alive: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    let mut done: Vec<Hypothesis> = Vec::new();
    for _ in 0..cfg.max_len {
        let mut cands: Vec<(usize, u32, f64)> = Vec::new();
        for (b, (tokens, lp)) in alive.iter().enumerate() {
            for (tok, l) in scorer.next_log_probs(tokens).into_iter().enumerate() {
                if l > f64::NEG_INFINITY {
                    cands.push((b, tok as u32, lp + l));
                }
            }
        }
        cands.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
        cands.truncate(cfg.width);
        let mut next = Vec::with_capacity(cands.len());
        for (b, tok, lp) in cands {
            let tokens = &alive[b].0;
            if tok == cfg.eos {
                done.push(Hypothesis::new(tokens.clone(), lp, true, cfg.length_norm_exponent));
            } else {
                let mut t = tokens.clone();
                t.push(tok);
                next.push((t, lp));
            }
        }
        alive = next;
        if alive.is_empty() {
            break;
        }
    }
    done.extend(alive.into_iter().map(|(t, lp)| Hypothesis::new(t, lp, false, cfg.length_norm_exponent)));
    done.sort_by(rank);
    Ok(done)
}

/// Argmax decoding (lowest token id on ties).
pub fn greedy_decode<S: StepScorer + ?Sized>(scorer: &S, max_len: usize, eos: u32, exponent: f64) -> Hypothesis {
    let mut tokens = Vec::new();
    let mut lp = 0.0;
    for _ in 0..max_len {
        let lps = scorer.next_log_probs(&tokens);
        let (best, l) = lps
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
        lp += l;
        if best as u32 == eos {
            return Hypothesis::new(tokens, lp, true, exponent);
        }
        tokens.push(best as u32);
    }
    Hypothesis::new(tokens, lp, false, exponent)
}
