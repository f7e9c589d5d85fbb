//! A small reverse-mode differentiation tape over [`Matrix`] values.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep visits every node
//! after all of its consumers. Parameter leaves read their values straight from the
//! parameter slice; their gradients are collected per parameter index.

use super::matrix::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Which keys a query row may attend to.
#[derive(Debug, Clone)]
pub struct AttnMask {
    pub key_valid: Vec<bool>,
    pub causal: bool,
}

impl AttnMask {
    #[inline]
    fn allowed(&self, q: usize, k: usize) -> bool {
        self.key_valid[k] && (!self.causal || k <= q)
    }
}

enum Op {
    Param(usize),
    Const,
    Gather { table: Var, ids: Vec<usize> },
    Add(Var, Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Scale(Var, f64),
    Softmax { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Matrix, inv_std: Vec<f64> },
    Gelu(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    Dropout { x: Var, mask: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Matrix },
}

struct Node {
    op: Op,
    value: Option<Matrix>,
}

pub struct Tape<'p> {
    params: &'p [Matrix],
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Matrix]) -> Self {
        Tape { params, nodes: Vec::with_capacity(256), param_vars: vec![None; params.len()] }
    }

    fn push(&mut self, op: Op, value: Option<Matrix>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (_, Some(m)) => m,
            (Op::Param(p), None) => &self.params[*p],
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn param(&mut self, idx: usize) -> Var {
        if let Some(v) = self.param_vars[idx] {
            return v;
        }
        let v = self.push(Op::Param(idx), None);
        self.param_vars[idx] = Some(v);
        v
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(Op::Const, Some(m))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Matrix::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(Op::Gather { table, ids: ids.to_vec() }, Some(out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(Op::Add(a, b), Some(out))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut out = self.value(a).clone();
        let r = self.value(row);
        assert_eq!((1, out.cols), r.shape());
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        self.push(Op::AddRow(a, row), Some(out))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), Some(out))
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_bt(self.value(b));
        self.push(Op::MatMulBT(a, b), Some(out))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale(s);
        self.push(Op::Scale(a, s), Some(out))
    }

    /// Row-wise softmax over allowed entries; disallowed entries are exactly zero.
    pub fn softmax(&mut self, x: Var, mask: AttnMask) -> Var {
        let xv = self.value(x);
        assert_eq!(mask.key_valid.len(), xv.cols);
        let mut out = Matrix::zeros(xv.rows, xv.cols);
        for i in 0..xv.rows {
            let row = xv.row(i);
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if mask.allowed(i, j) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                continue;
            }
            let orow = out.row_mut(i);
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if mask.allowed(i, j) {
                    let e = (v - max).exp();
                    orow[j] = e;
                    sum += e;
                }
            }
            orow.iter_mut().for_each(|o| *o /= sum);
        }
        self.push(Op::Softmax { x }, Some(out))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let g = &self.value(gain).data;
        let b = &self.value(bias).data;
        let mut xhat = Matrix::zeros(rows, cols);
        let mut out = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for i in 0..rows {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for j in 0..cols {
                let h = (row[j] - mean) * is;
                xhat.data[i * cols + j] = h;
                out.data[i * cols + j] = h * g[j] + b[j];
            }
        }
        self.push(Op::LayerNorm { x, gain, bias, xhat, inv_std }, Some(out))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data.iter_mut() {
            let x = *v;
            *v = 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh());
        }
        self.push(Op::Gelu(x), Some(out))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let mut out = Matrix::zeros(xv.rows, len);
        for i in 0..xv.rows {
            out.row_mut(i).copy_from_slice(&xv.row(i)[start..start + len]);
        }
        self.push(Op::SliceCols { x, start }, Some(out))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            for i in 0..rows {
                out.row_mut(i)[off..off + pv.cols].copy_from_slice(pv.row(i));
            }
            off += pv.cols;
        }
        self.push(Op::ConcatCols(parts.to_vec()), Some(out))
    }

    /// Multiplies by a fixed mask (already scaled by `1/(1-p)` where kept).
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let mut out = self.value(x).clone();
        assert_eq!(out.data.len(), mask.len());
        for (o, m) in out.data.iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(Op::Dropout { x, mask }, Some(out))
    }

    /// Summed token cross-entropy over rows whose target is `Some`. Returns a `1 × 1` node.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: Vec<Option<usize>>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows, targets.len());
        let mut probs = Matrix::zeros(lv.rows, lv.cols);
        let mut total = 0.0;
        for (i, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            total += lse - row[t];
            for (p, v) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        self.push(Op::CrossEntropy { logits, targets, probs }, Some(Matrix::from_vec(1, 1, vec![total])))
    }

    /// Back-propagates from a `1 × 1` node with seed gradient `seed`. Returns one gradient per
    /// parameter (None for parameters the graph never touched).
    pub fn backward(self, out: Var, seed: f64) -> Vec<Option<Matrix>> {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        grads[out.0] = Some(Matrix::from_vec(1, 1, vec![seed]));
        let mut param_grads: Vec<Option<Matrix>> = vec![None; self.params.len()];

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Param(p) => param_grads[*p] = Some(g),
                Op::Const => {}
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut dt = Matrix::zeros(t.rows, t.cols);
                    for (r, &id) in ids.iter().enumerate() {
                        for (d, s) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                    acc(&mut grads, *table, dt);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let mut dr = Matrix::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for (d, s) in dr.data.iter_mut().zip(g.row(i)) {
                            *d += s;
                        }
                    }
                    acc(&mut grads, *row, dr);
                    acc(&mut grads, *a, g);
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_bt(self.value(*b));
                    let db = self.value(*a).matmul_at(&g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatMulBT(a, b) => {
                    // out = a bᵀ: da = g b, db = gᵀ a
                    let da = g.matmul(self.value(*b));
                    let db = g.matmul_at(self.value(*a));
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Scale(a, s) => {
                    let mut d = g;
                    d.scale(*s);
                    acc(&mut grads, *a, d);
                }
                Op::Softmax { x, .. } => {
                    let y = node.value.as_ref().unwrap();
                    let mut dx = Matrix::zeros(y.rows, y.cols);
                    for i in 0..y.rows {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let inner = dot(yr, gr);
                        for (j, d) in dx.row_mut(i).iter_mut().enumerate() {
                            *d = yr[j] * (gr[j] - inner);
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let gv = &self.value(*gain).data;
                    let (rows, cols) = xhat.shape();
                    let mut dx = Matrix::zeros(rows, cols);
                    let mut dg = Matrix::zeros(1, cols);
                    let mut db = Matrix::zeros(1, cols);
                    let mut dh = vec![0.0; cols];
                    for (i, &istd) in inv_std.iter().enumerate().take(rows) {
                        let gr = g.row(i);
                        let hr = xhat.row(i);
                        for j in 0..cols {
                            dg.data[j] += gr[j] * hr[j];
                            db.data[j] += gr[j];
                            dh[j] = gr[j] * gv[j];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / cols as f64;
                        let mean_dh_h = dot(&dh, hr) / cols as f64;
                        for (j, d) in dx.row_mut(i).iter_mut().enumerate() {
                            *d = istd * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gain, dg);
                    acc(&mut grads, *bias, db);
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    for (d, &x) in dx.data.iter_mut().zip(&xv.data) {
                        let u = GELU_C * (x + 0.044715 * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                        *d *= 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut dx = Matrix::zeros(xv.rows, xv.cols);
                    for i in 0..g.rows {
                        dx.row_mut(i)[*start..*start + g.cols].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let cols = self.value(p).cols;
                        let mut dp = Matrix::zeros(g.rows, cols);
                        for i in 0..g.rows {
                            dp.row_mut(i).copy_from_slice(&g.row(i)[off..off + cols]);
                        }
                        off += cols;
                        acc(&mut grads, p, dp);
                    }
                }
                Op::Dropout { x, mask } => {
                    let mut dx = g;
                    for (d, m) in dx.data.iter_mut().zip(mask) {
                        *d *= m;
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let s = g.data[0];
                    let mut dl = Matrix::zeros(probs.rows, probs.cols);
                    for (i, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for (d, p) in dl.row_mut(i).iter_mut().zip(probs.row(i)) {
                            *d = s * p;
                        }
                        dl.data[i * probs.cols + t] -= s;
                    }
                    acc(&mut grads, *logits, dl);
                }
            }
        }
        param_grads
    }
}
