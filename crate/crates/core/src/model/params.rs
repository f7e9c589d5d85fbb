use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::ModelError;
use crate::linearize::RoleId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub dropout_rate: f64,
    pub max_positions: usize,
    pub seed: u64,
    /// When false the role-embedding table is neither read nor trained.
    #[serde(default = "default_true")]
    pub use_role_embeddings: bool,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    /// Six encoder and six decoder layers; width kept small enough for a CPU.
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 6,
            n_dec_layers: 6,
            d_ff: 256,
            dropout_rate: 0.1,
            max_positions: 128,
            seed: 0,
            use_role_embeddings: true,
        }
    }

    /// Two-layer configuration used for desk-scale experiments.
    pub fn desk(vocab_size: usize, d_model: usize) -> Self {
        ModelConfig { d_model, n_enc_layers: 2, n_dec_layers: 2, d_ff: 4 * d_model, ..Self::new(vocab_size) }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_enc_layers", self.n_enc_layers),
            ("n_dec_layers", self.n_dec_layers),
            ("d_ff", self.d_ff),
            ("max_positions", self.max_positions),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Config(format!("dropout {} not in [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}

/// Parameter indices for one attention sub-layer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnIdx {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FfIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NormIdx {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct EncLayerIdx {
    pub ln1: NormIdx,
    pub attn: AttnIdx,
    pub ln2: NormIdx,
    pub ff: FfIdx,
}

#[derive(Debug, Clone)]
pub(crate) struct DecLayerIdx {
    pub ln1: NormIdx,
    pub self_attn: AttnIdx,
    pub ln2: NormIdx,
    pub cross_attn: AttnIdx,
    pub ln3: NormIdx,
    pub ff: FfIdx,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub tok_emb: usize,
    pub enc_pos: usize,
    pub dec_pos: usize,
    pub role_emb: usize,
    pub enc: Vec<EncLayerIdx>,
    pub enc_ln: NormIdx,
    pub dec: Vec<DecLayerIdx>,
    pub dec_ln: NormIdx,
    pub out_w: usize,
    pub out_b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Embedding,
    Xavier,
    Zeros,
    Ones,
}

struct LayoutBuilder {
    specs: Vec<(String, usize, usize, Init)>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push((name, rows, cols, init));
        self.specs.len() - 1
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIdx {
        NormIdx {
            gain: self.add(format!("{prefix}.gain"), 1, d, Init::Ones),
            bias: self.add(format!("{prefix}.bias"), 1, d, Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIdx {
        let mut pair = |n: &str| {
            let w = self.add(format!("{prefix}.w{n}"), d, d, Init::Xavier);
            let b = self.add(format!("{prefix}.b{n}"), 1, d, Init::Zeros);
            (w, b)
        };
        let (wq, bq) = pair("q");
        let (wk, bk) = pair("k");
        let (wv, bv) = pair("v");
        let (wo, bo) = pair("o");
        AttnIdx { wq, bq, wk, bk, wv, bv, wo, bo }
    }

    fn ff(&mut self, prefix: &str, d: usize, d_ff: usize) -> FfIdx {
        FfIdx {
            w1: self.add(format!("{prefix}.w1"), d, d_ff, Init::Xavier),
            b1: self.add(format!("{prefix}.b1"), 1, d_ff, Init::Zeros),
            w2: self.add(format!("{prefix}.w2"), d_ff, d, Init::Xavier),
            b2: self.add(format!("{prefix}.b2"), 1, d, Init::Zeros),
        }
    }
}

fn build_layout(c: &ModelConfig) -> (Layout, Vec<(String, usize, usize, Init)>) {
    let d = c.d_model;
    let mut b = LayoutBuilder { specs: Vec::new() };
    let tok_emb = b.add("tok_emb".into(), c.vocab_size, d, Init::Embedding);
    let enc_pos = b.add("enc_pos_emb".into(), c.max_positions, d, Init::Embedding);
    let dec_pos = b.add("dec_pos_emb".into(), c.max_positions, d, Init::Embedding);
    let role_emb = b.add("role_emb".into(), RoleId::COUNT, d, Init::Zeros);
    let enc = (0..c.n_enc_layers)
        .map(|l| EncLayerIdx {
            ln1: b.norm(&format!("enc.{l}.ln1"), d),
            attn: b.attn(&format!("enc.{l}.attn"), d),
            ln2: b.norm(&format!("enc.{l}.ln2"), d),
            ff: b.ff(&format!("enc.{l}.ff"), d, c.d_ff),
        })
        .collect();
    let enc_ln = b.norm("enc.ln_f", d);
    let dec = (0..c.n_dec_layers)
        .map(|l| DecLayerIdx {
            ln1: b.norm(&format!("dec.{l}.ln1"), d),
            self_attn: b.attn(&format!("dec.{l}.self_attn"), d),
            ln2: b.norm(&format!("dec.{l}.ln2"), d),
            cross_attn: b.attn(&format!("dec.{l}.cross_attn"), d),
            ln3: b.norm(&format!("dec.{l}.ln3"), d),
            ff: b.ff(&format!("dec.{l}.ff"), d, c.d_ff),
        })
        .collect();
    let dec_ln = b.norm("dec.ln_f", d);
    let out_w = b.add("out.w".into(), d, c.vocab_size, Init::Xavier);
    let out_b = b.add("out.b".into(), 1, c.vocab_size, Init::Zeros);
    let layout = Layout { tok_emb, enc_pos, dec_pos, role_emb, enc, enc_ln, dec, dec_ln, out_w, out_b };
    (layout, b.specs)
}

/// All model weights as named tensors in a fixed order determined by the config.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    names: Vec<String>,
    pub tensors: Vec<Matrix>,
    pub(crate) layout: Layout,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.tensors == other.tensors
    }
}

impl ModelParams {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn role_embeddings(&self) -> &Matrix {
        &self.tensors[self.layout.role_emb]
    }

    pub fn role_embeddings_mut(&mut self) -> &mut Matrix {
        &mut self.tensors[self.layout.role_emb]
    }

    #[cfg(test)]
    pub(crate) fn role_index(&self) -> usize {
        self.layout.role_emb
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Gradients {
        Gradients { tensors: self.tensors.iter().map(|t| Matrix::zeros(t.rows, t.cols)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }

    /// Rebuilds params from a config and tensors in layout order, checking shapes.
    pub fn from_tensors(config: ModelConfig, named: Vec<(String, Matrix)>) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, specs) = build_layout(&config);
        if specs.len() != named.len() {
            return Err(ModelError::Checkpoint(format!("expected {} tensors, found {}", specs.len(), named.len())));
        }
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for ((name, rows, cols, _), (n, m)) in specs.into_iter().zip(named) {
            if name != n || (rows, cols) != m.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {n} {:?} does not match expected {name} ({rows}, {cols})",
                    m.shape()
                )));
            }
            names.push(name);
            tensors.push(m);
        }
        Ok(ModelParams { config, names, tensors, layout })
    }
}

/// Gradients (or optimizer moments) congruent to [`ModelParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Matrix>,
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors.iter_mut().for_each(|t| t.scale(s));
    }
}

/// Deterministic initialization from `config.seed`.
///
/// Weight matrices use Xavier-uniform `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`;
/// token and position embeddings use `U(-sqrt(3/d), sqrt(3/d))` (unit variance per row);
/// biases and the role-embedding table start at zero; layer-norm gains at one.
pub fn init_model(config: &ModelConfig) -> Result<ModelParams, ModelError> {
    config.validate()?;
    let (layout, specs) = build_layout(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut names = Vec::with_capacity(specs.len());
    let mut tensors = Vec::with_capacity(specs.len());
    for (name, rows, cols, init) in specs {
        let m = match init {
            Init::Zeros => Matrix::zeros(rows, cols),
            Init::Ones => Matrix::filled(rows, cols, 1.0),
            Init::Xavier | Init::Embedding => {
                let a = if init == Init::Xavier {
                    (6.0 / (rows + cols) as f64).sqrt()
                } else {
                    (3.0 / cols as f64).sqrt()
                };
                Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect())
            }
        };
        names.push(name);
        tensors.push(m);
    }
    Ok(ModelParams { config: config.clone(), names, tensors, layout })
}
