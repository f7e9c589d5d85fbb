use serde::{Deserialize, Serialize};

use crate::model::{Gradients, Matrix, ModelError, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { learning_rate: 3e-5, weight_decay: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(shapes: &[Matrix]) -> Self {
        let zeros = || shapes.iter().map(|t| Matrix::zeros(t.rows, t.cols)).collect();
        AdamState { step: 0, m: zeros(), v: zeros() }
    }
}

/// One AdamW step over raw tensors with decoupled weight decay:
/// `p ← p − lr·m̂/(√v̂ + ε) − lr·wd·p`.
pub fn adamw_update(
    params: &mut [Matrix],
    grads: &[Matrix],
    state: &mut AdamState,
    cfg: &AdamWConfig,
    names: &[String],
) -> Result<(), ModelError> {
    let congruent = params.len() == grads.len()
        && params.len() == state.m.len()
        && params.iter().zip(grads).zip(&state.m).all(|((p, g), m)| p.shape() == g.shape() && p.shape() == m.shape());
    if !congruent {
        let bad = params
            .iter()
            .zip(grads)
            .position(|(p, g)| p.shape() != g.shape())
            .and_then(|i| names.get(i).cloned())
            .unwrap_or_else(|| "<count>".into());
        return Err(ModelError::ShapeMismatch(bad));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (lr, wd) = (cfg.learning_rate, cfg.weight_decay);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m.data[i] / bc1;
            let v_hat = v.data[i] / bc2;
            let old = p.data[i];
            p.data[i] = old - lr * (m_hat / (v_hat.sqrt() + cfg.eps)) - lr * wd * old;
        }
    }
    Ok(())
}

pub fn adamw_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamWConfig,
) -> Result<(), ModelError> {
    let names = params.names().to_vec();
    adamw_update(&mut params.tensors, &grads.tensors, state, cfg, &names)
}
