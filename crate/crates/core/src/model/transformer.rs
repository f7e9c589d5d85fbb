use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matrix::Matrix;
use super::params::{AttnIdx, FfIdx, NormIdx};
use super::tape::{AttnMask, Tape, Var};
use super::{Gradients, ModelError, ModelParams};
use crate::exec::ExecMode;
use crate::linearize::{LinearizedInput, RoleId, BOS_ID, EOS_ID, PAD_ID};

/// Padded batch. Padding is always at the tail of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub enc_tokens: Vec<Vec<u32>>,
    pub enc_roles: Vec<Vec<RoleId>>,
    pub enc_mask: Vec<Vec<bool>>,
    pub dec_input: Vec<Vec<u32>>,
    pub dec_target: Vec<Vec<u32>>,
    pub dec_mask: Vec<Vec<bool>>,
}

impl Batch {
    /// Decoder inputs are `⟨BOS⟩ target`, targets are `target ⟨EOS⟩`.
    pub fn from_pairs<'a, I>(pairs: I) -> Batch
    where
        I: IntoIterator<Item = (&'a LinearizedInput, &'a [u32])>,
    {
        let pairs: Vec<_> = pairs.into_iter().collect();
        let s = pairs.iter().map(|(src, _)| src.len()).max().unwrap_or(0);
        let t = pairs.iter().map(|(_, tgt)| tgt.len() + 1).max().unwrap_or(0);
        let mut b = Batch {
            enc_tokens: Vec::new(),
            enc_roles: Vec::new(),
            enc_mask: Vec::new(),
            dec_input: Vec::new(),
            dec_target: Vec::new(),
            dec_mask: Vec::new(),
        };
        for (src, tgt) in pairs {
            let pad_s = s - src.len();
            b.enc_tokens.push(src.tokens.iter().copied().chain(std::iter::repeat_n(PAD_ID, pad_s)).collect());
            b.enc_roles.push(src.roles.iter().copied().chain(std::iter::repeat_n(RoleId::Other, pad_s)).collect());
            b.enc_mask.push((0..s).map(|i| i < src.len()).collect());
            let n = tgt.len() + 1;
            let pad_t = t - n;
            b.dec_input.push(std::iter::once(BOS_ID).chain(tgt.iter().copied()).chain(std::iter::repeat_n(PAD_ID, pad_t)).collect());
            b.dec_target.push(tgt.iter().copied().chain([EOS_ID]).chain(std::iter::repeat_n(PAD_ID, pad_t)).collect());
            b.dec_mask.push((0..t).map(|i| i < n).collect());
        }
        b
    }

    pub fn len(&self) -> usize {
        self.enc_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.enc_tokens.is_empty()
    }

    pub fn target_count(&self) -> usize {
        self.dec_mask.iter().flatten().filter(|&&m| m).count()
    }

    fn validate(&self, p: &ModelParams) -> Result<(), ModelError> {
        let b = self.len();
        let lens = [self.enc_roles.len(), self.enc_mask.len(), self.dec_input.len(), self.dec_target.len(), self.dec_mask.len()];
        if lens.iter().any(|&l| l != b) {
            return Err(ModelError::BadBatch("batch dimension differs between arrays".into()));
        }
        let v = p.config.vocab_size;
        let max = p.config.max_positions;
        for i in 0..b {
            let s = self.enc_tokens[i].len();
            if self.enc_roles[i].len() != s || self.enc_mask[i].len() != s {
                return Err(ModelError::BadBatch(format!("row {i}: role/mask shape differs from encoder tokens")));
            }
            let t = self.dec_input[i].len();
            if self.dec_target[i].len() != t || self.dec_mask[i].len() != t {
                return Err(ModelError::BadBatch(format!("row {i}: decoder arrays differ in length")));
            }
            for len in [s, t] {
                if len > max {
                    return Err(ModelError::TooLong { len, max });
                }
            }
            if !self.enc_mask[i].iter().any(|&m| m) {
                return Err(ModelError::BadBatch(format!("row {i}: encoder input is entirely padding")));
            }
            for &id in self.enc_tokens[i].iter().chain(&self.dec_input[i]).chain(&self.dec_target[i]) {
                if id as usize >= v {
                    return Err(ModelError::IdOutOfRange { id, vocab_size: v });
                }
            }
        }
        Ok(())
    }
}

/// Forward mode. Dropout is active only in `Train`, with masks drawn from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

/// Logits `[B × T × vocab_size]`, one `T × vocab_size` matrix per batch row.
pub type Logits = Vec<Matrix>;

fn example_rng(seed: u64, row: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (row as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

struct Net<'a> {
    p: &'a ModelParams,
    tape: Tape<'a>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl<'a> Net<'a> {
    fn new(p: &'a ModelParams, dropout_rng: Option<ChaCha8Rng>) -> Self {
        let rate = p.config.dropout_rate;
        let dropout = dropout_rng.filter(|_| rate > 0.0).map(|rng| (rate, rng));
        Net { p, tape: Tape::new(&p.tensors), dropout }
    }

    fn dropout(&mut self, x: Var) -> Var {
        let Some((rate, rng)) = self.dropout.as_mut() else { return x };
        let n = self.tape.value(x).data.len();
        let keep = 1.0 / (1.0 - *rate);
        let mask = (0..n).map(|_| if rng.gen::<f64>() < *rate { 0.0 } else { keep }).collect();
        self.tape.dropout(x, mask)
    }

    fn linear(&mut self, x: Var, w: usize, b: usize) -> Var {
        let w = self.tape.param(w);
        let b = self.tape.param(b);
        let y = self.tape.matmul(x, w);
        self.tape.add_row(y, b)
    }

    fn norm(&mut self, x: Var, idx: NormIdx) -> Var {
        let g = self.tape.param(idx.gain);
        let b = self.tape.param(idx.bias);
        self.tape.layer_norm(x, g, b)
    }

    fn attention(&mut self, xq: Var, xkv: Var, a: AttnIdx, mask: &AttnMask) -> Var {
        let q = self.linear(xq, a.wq, a.bq);
        let k = self.linear(xkv, a.wk, a.bk);
        let v = self.linear(xkv, a.wv, a.bv);
        let heads = self.p.config.n_heads;
        let dh = self.p.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.tape.slice_cols(q, h * dh, dh);
            let kh = self.tape.slice_cols(k, h * dh, dh);
            let vh = self.tape.slice_cols(v, h * dh, dh);
            let s = self.tape.matmul_bt(qh, kh);
            let s = self.tape.scale(s, scale);
            let w = self.tape.softmax(s, mask.clone());
            outs.push(self.tape.matmul(w, vh));
        }
        let cat = if heads == 1 { outs[0] } else { self.tape.concat_cols(&outs) };
        self.linear(cat, a.wo, a.bo)
    }

    fn feed_forward(&mut self, x: Var, f: FfIdx) -> Var {
        let h = self.linear(x, f.w1, f.b1);
        let h = self.tape.gelu(h);
        self.linear(h, f.w2, f.b2)
    }

    fn embed(&mut self, ids: &[u32], pos_table: usize) -> Var {
        let tok = self.tape.param(self.p.layout.tok_emb);
        let pos = self.tape.param(pos_table);
        let ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..ids.len()).collect();
        let te = self.tape.gather(tok, &ids);
        let pe = self.tape.gather(pos, &positions);
        self.tape.add(te, pe)
    }

    fn encode(&mut self, tokens: &[u32], roles: &[RoleId], valid: &[bool]) -> Var {
        let layout = &self.p.layout;
        let mut x = self.embed(tokens, layout.enc_pos);
        if self.p.config.use_role_embeddings {
            let table = self.tape.param(layout.role_emb);
            let ids: Vec<usize> = roles.iter().map(|r| r.index()).collect();
            let re = self.tape.gather(table, &ids);
            x = self.tape.add(x, re);
        }
        x = self.dropout(x);
        let mask = AttnMask { key_valid: valid.to_vec(), causal: false };
        for l in &layout.enc {
            let h = self.norm(x, l.ln1);
            let a = self.attention(h, h, l.attn, &mask);
            let a = self.dropout(a);
            x = self.tape.add(x, a);
            let h = self.norm(x, l.ln2);
            let f = self.feed_forward(h, l.ff);
            let f = self.dropout(f);
            x = self.tape.add(x, f);
        }
        self.norm(x, layout.enc_ln)
    }

    /// Returns logits for every decoder position, or only the last when `last_only`.
    fn decode(&mut self, enc: Var, enc_valid: &[bool], ids: &[u32], valid: &[bool], last_only: bool) -> Var {
        let layout = &self.p.layout;
        let mut y = self.embed(ids, layout.dec_pos);
        y = self.dropout(y);
        let self_mask = AttnMask { key_valid: valid.to_vec(), causal: true };
        let cross_mask = AttnMask { key_valid: enc_valid.to_vec(), causal: false };
        for l in &layout.dec {
            let h = self.norm(y, l.ln1);
            let a = self.attention(h, h, l.self_attn, &self_mask);
            let a = self.dropout(a);
            y = self.tape.add(y, a);
            let h = self.norm(y, l.ln2);
            let c = self.attention(h, enc, l.cross_attn, &cross_mask);
            let c = self.dropout(c);
            y = self.tape.add(y, c);
            let h = self.norm(y, l.ln3);
            let f = self.feed_forward(h, l.ff);
            let f = self.dropout(f);
            y = self.tape.add(y, f);
        }
        let mut y = self.norm(y, layout.dec_ln);
        if last_only {
            y = self.tape.gather(y, &[ids.len() - 1]);
        }
        self.linear(y, layout.out_w, layout.out_b)
    }
}

fn trimmed_len(mask: &[bool]) -> usize {
    mask.iter().rposition(|&m| m).map_or(0, |i| i + 1)
}

fn row_rng(mode: Mode, row: usize) -> Option<ChaCha8Rng> {
    match mode {
        Mode::Eval => None,
        Mode::Train { seed } => Some(example_rng(seed, row)),
    }
}

/// Logits for one batch row at full padded length.
pub fn forward_example(p: &ModelParams, batch: &Batch, row: usize, mode: Mode) -> Matrix {
    let mut net = Net::new(p, row_rng(mode, row));
    let enc = net.encode(&batch.enc_tokens[row], &batch.enc_roles[row], &batch.enc_mask[row]);
    let logits = net.decode(enc, &batch.enc_mask[row], &batch.dec_input[row], &batch.dec_mask[row], false);
    net.tape.value(logits).clone()
}

/// Logits `[B × T × vocab_size]` for a batch.
pub fn forward(p: &ModelParams, batch: &Batch, mode: Mode) -> Result<Logits, ModelError> {
    batch.validate(p)?;
    let rows: Vec<usize> = (0..batch.len()).collect();
    Ok(ExecMode::Parallel.map(&rows, |_, &r| forward_example(p, batch, r, mode)))
}

/// Mean token cross-entropy over non-pad targets and its gradient, without dropout.
pub fn loss_and_grads(p: &ModelParams, batch: &Batch) -> Result<(f64, Gradients), ModelError> {
    loss_and_grads_with(p, batch, Mode::Eval, ExecMode::Parallel)
}

/// As [`loss_and_grads`], choosing dropout mode and execution strategy. Rows are processed
/// independently (trailing padding trimmed) and their gradients summed in row order.
pub fn loss_and_grads_with(
    p: &ModelParams,
    batch: &Batch,
    mode: Mode,
    exec: ExecMode,
) -> Result<(f64, Gradients), ModelError> {
    batch.validate(p)?;
    let count = batch.target_count();
    if count == 0 {
        return Err(ModelError::AllPad);
    }
    let inv = 1.0 / count as f64;
    let rows: Vec<usize> = (0..batch.len()).collect();
    let per_row = exec.map(&rows, |_, &r| {
        let s = trimmed_len(&batch.enc_mask[r]);
        let t = trimmed_len(&batch.dec_mask[r]);
        if t == 0 {
            return None;
        }
        let mut net = Net::new(p, row_rng(mode, r));
        let enc = net.encode(&batch.enc_tokens[r][..s], &batch.enc_roles[r][..s], &batch.enc_mask[r][..s]);
        let logits = net.decode(enc, &batch.enc_mask[r][..s], &batch.dec_input[r][..t], &batch.dec_mask[r][..t], false);
        let targets = batch.dec_target[r][..t]
            .iter()
            .zip(&batch.dec_mask[r][..t])
            .map(|(&id, &m)| m.then_some(id as usize))
            .collect();
        let loss = net.tape.cross_entropy_sum(logits, targets);
        let total = net.tape.value(loss).data[0];
        Some((total, net.tape.backward(loss, inv)))
    });

    let mut grads = p.zeros_like();
    let mut total = 0.0;
    for (sum, row_grads) in per_row.into_iter().flatten() {
        total += sum;
        for (g, rg) in grads.tensors.iter_mut().zip(row_grads) {
            if let Some(rg) = rg {
                g.add_assign(&rg);
            }
        }
    }
    Ok((total * inv, grads))
}

/// Encoder output for one source, reusable across decoding steps.
pub struct EncodedSource<'a> {
    params: &'a ModelParams,
    enc_out: Matrix,
    enc_valid: Vec<bool>,
}

impl<'a> EncodedSource<'a> {
    pub fn new(params: &'a ModelParams, source: &LinearizedInput) -> Result<Self, ModelError> {
        let max = params.config.max_positions;
        if source.len() > max {
            return Err(ModelError::TooLong { len: source.len(), max });
        }
        if source.is_empty() {
            return Err(ModelError::BadBatch("empty source".into()));
        }
        if let Some(&id) = source.tokens.iter().find(|&&id| id as usize >= params.config.vocab_size) {
            return Err(ModelError::IdOutOfRange { id, vocab_size: params.config.vocab_size });
        }
        let valid = vec![true; source.len()];
        let mut net = Net::new(params, None);
        let enc = net.encode(&source.tokens, &source.roles, &valid);
        let enc_out = net.tape.value(enc).clone();
        Ok(EncodedSource { params, enc_out, enc_valid: valid })
    }

    pub fn max_positions(&self) -> usize {
        self.params.config.max_positions
    }

    /// Log-probabilities of the next token after `⟨BOS⟩ prefix`.
    pub fn next_log_probs(&self, prefix: &[u32]) -> Vec<f64> {
        let mut ids = Vec::with_capacity(prefix.len() + 1);
        ids.push(BOS_ID);
        ids.extend_from_slice(prefix);
        let valid = vec![true; ids.len()];
        let mut net = Net::new(self.params, None);
        let enc = net.tape.constant(self.enc_out.clone());
        let logits = net.decode(enc, &self.enc_valid, &ids, &valid, true);
        log_softmax(net.tape.value(logits).row(0))
    }
}

pub(crate) fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}
