//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends one node holding its output value. In recording
//! mode the node also remembers its inputs so [`Tape::backward`] can replay the
//! chain rule in reverse. Nodes that do not depend on a parameter are never
//! visited by the backward pass.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::kernels::{self, gemm_nn, gemm_nt, gemm_tn};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    SoftClip(Var, f64),
    ConcatLast(Var, Var),
    ConcatRows(Var, Var),
    MaskedSoftmax(Var),
    InstanceNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        inv_std: Vec<f64>,
        floored: Vec<bool>,
    },
    SplitHeads { x: Var, heads: usize },
    MergeHeads(Var),
    ScoreMixer {
        scores: Var,
        feats: Arc<Tensor>,
        w1: Var,
        b1: Var,
        w2: Var,
        b2: Var,
    },
    GatherRows { x: Var, idx: Vec<usize> },
    PickLog { p: Var, idx: Vec<usize> },
    DotConst { x: Var, w: Vec<f64> },
    Sum(Var),
}

/// Variance floor for instance normalization.
pub const NORM_EPS: f64 = 1e-5;

pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    needs_grad: Vec<bool>,
    params: BTreeMap<ParamId, Var>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// Batched matmul geometry: (batch, a_batched, b_batched, m, k, n).
fn mm_dims(
    a: &[usize],
    b: &[usize],
    trans_b: bool,
) -> Option<(usize, bool, bool, usize, usize, usize)> {
    let (ab, m, k) = match *a {
        [m, k] => (None, m, k),
        [h, m, k] => (Some(h), m, k),
        _ => return None,
    };
    let (bb, r, c) = match *b {
        [r, c] => (None, r, c),
        [h, r, c] => (Some(h), r, c),
        _ => return None,
    };
    let (kb, n) = if trans_b { (c, r) } else { (r, c) };
    if kb != k {
        return None;
    }
    let batch = match (ab, bb) {
        (Some(x), Some(y)) if x != y => return None,
        (Some(x), _) | (_, Some(x)) => x,
        (None, None) => 1,
    };
    Some((batch, ab.is_some(), bb.is_some(), m, k, n))
}

impl Tape {
    /// Tape that records operations for a later backward pass.
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
            needs_grad: Vec::new(),
            params: BTreeMap::new(),
            recording: true,
        }
    }

    /// Forward-only tape: values are computed, nothing is recorded.
    pub fn inference() -> Self {
        Tape {
            recording: false,
            ..Tape::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, TensorError> {
        #[cfg(debug_assertions)]
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let _ = op_name;
        let needs = self.recording && inputs.iter().any(|v| self.needs_grad[v.0]);
        self.values.push(value);
        self.ops.push(if needs { op } else { Op::Leaf });
        self.needs_grad.push(needs);
        Ok(Var(self.values.len() - 1))
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.values.push(value);
        self.ops.push(Op::Leaf);
        self.needs_grad.push(false);
        Var(self.values.len() - 1)
    }

    /// Loads a parameter once per tape; later calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.values.push(store.get(id).clone());
        self.ops.push(Op::Param(id));
        self.needs_grad.push(self.recording);
        let v = Var(self.values.len() - 1);
        self.params.insert(id, v);
        v
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, TensorError> {
        let name = if trans_b { "matmul_nt" } else { "matmul" };
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        let (batch, ab, bb, m, k, n) =
            mm_dims(ta.shape(), tb.shape(), trans_b).ok_or_else(|| mismatch(name, ta, tb))?;
        let mut out = vec![0.0; batch * m * n];
        for t in 0..batch {
            let ao = if ab { t * m * k } else { 0 };
            let bo = if bb { t * k * n } else { 0 };
            let c = &mut out[t * m * n..(t + 1) * m * n];
            if trans_b {
                gemm_nt(&ta.data()[ao..], &tb.data()[bo..], c, m, k, n);
            } else {
                gemm_nn(&ta.data()[ao..], &tb.data()[bo..], c, m, k, n);
            }
        }
        let shape = if ab || bb { vec![batch, m, n] } else { vec![m, n] };
        let value = Tensor::new(shape, out)?;
        self.push(name, value, Op::MatMul { a, b, trans_b }, &[a, b])
    }

    /// `a @ b` for rank-2 or rank-3 (batched) operands. A rank-2 operand is
    /// shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, false)
    }

    /// `a @ b^T` over the last two axes.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if ta.shape() != tb.shape() {
            return Err(mismatch("add", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    /// Adds a bias vector `[d]` to every row of `x[..., d]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (tx, tb) = (&self.values[x.0], &self.values[bias.0]);
        let d = *tx.shape().last().unwrap_or(&0);
        if tb.len() != d || d == 0 {
            return Err(mismatch("add_bias", tx, tb));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(d) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("add_bias", value, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        let tx = &self.values[x.0];
        let value = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| v * c).collect())?;
        self.push("scale", value, Op::Scale(x, c), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let tx = &self.values[x.0];
        let value = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| v.max(0.0)).collect())?;
        self.push("relu", value, Op::Relu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        let tx = &self.values[x.0];
        let value = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| libm::tanh(*v)).collect())?;
        self.push("tanh", value, Op::Tanh(x), &[x])
    }

    /// `c * tanh(x / c)`.
    pub fn soft_clip(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        let tx = &self.values[x.0];
        let value = Tensor::new(
            tx.shape().to_vec(),
            tx.data().iter().map(|v| kernels::soft_clip(*v, c)).collect(),
        )?;
        self.push("soft_clip", value, Op::SoftClip(x, c), &[x])
    }

    /// Concatenates two rank-2 tensors along the last axis.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        let (&[r, c1], &[r2, c2]) = (ta.shape(), tb.shape()) else {
            return Err(mismatch("concat_last", ta, tb));
        };
        if r != r2 {
            return Err(mismatch("concat_last", ta, tb));
        }
        let mut data = Vec::with_capacity(r * (c1 + c2));
        for i in 0..r {
            data.extend_from_slice(ta.row(i));
            data.extend_from_slice(tb.row(i));
        }
        let value = Tensor::new(vec![r, c1 + c2], data)?;
        self.push("concat_last", value, Op::ConcatLast(a, b), &[a, b])
    }

    /// Stacks the rows of two rank-2 tensors.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        let (&[r1, c], &[r2, c2]) = (ta.shape(), tb.shape()) else {
            return Err(mismatch("concat_rows", ta, tb));
        };
        if c != c2 {
            return Err(mismatch("concat_rows", ta, tb));
        }
        let mut data = ta.data().to_vec();
        data.extend_from_slice(tb.data());
        let value = Tensor::new(vec![r1 + r2, c], data)?;
        self.push("concat_rows", value, Op::ConcatRows(a, b), &[a, b])
    }

    /// Softmax over the last axis. `mask` (true = excluded) has shape
    /// `[rows, last]` and is broadcast over any leading batch axis; excluded
    /// entries come out as exact zeros.
    pub fn masked_softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var, TensorError> {
        let tx = &self.values[x.0];
        let c = *tx.shape().last().unwrap_or(&0);
        if c == 0 {
            return Err(TensorError::Invalid {
                op: "masked_softmax",
                reason: "empty last axis".into(),
            });
        }
        let rows = tx.len() / c;
        let mask_rows = match mask {
            Some(m) if m.is_empty() || m.len() % c != 0 || rows % (m.len() / c) != 0 => {
                return Err(TensorError::ShapeMismatch {
                    op: "masked_softmax",
                    left: tx.shape().to_vec(),
                    right: vec![m.len()],
                })
            }
            Some(m) => m.len() / c,
            None => 1,
        };
        let mut out = vec![0.0; tx.len()];
        for r in 0..rows {
            let mrow = mask.map(|m| &m[(r % mask_rows) * c..(r % mask_rows + 1) * c]);
            let ok = kernels::masked_softmax_row(
                &tx.data()[r * c..(r + 1) * c],
                mrow,
                &mut out[r * c..(r + 1) * c],
            );
            if !ok {
                return Err(TensorError::AllMasked {
                    op: "masked_softmax",
                    row: r % mask_rows,
                });
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        self.push("masked_softmax", value, Op::MaskedSoftmax(x), &[x])
    }

    /// Instance normalization of `x[n, d]` over the node axis, per feature
    /// channel, followed by the affine map `gamma * xhat + beta`. The variance
    /// is floored at [`NORM_EPS`].
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let (tx, tg, tb) = (&self.values[x.0], &self.values[gamma.0], &self.values[beta.0]);
        let &[n, d] = tx.shape() else {
            return Err(mismatch("instance_norm", tx, tg));
        };
        if tg.len() != d || tb.len() != d || n == 0 {
            return Err(mismatch("instance_norm", tx, tg));
        }
        let (xhat, inv_std, floored) = normalize_columns(tx.data(), n, d);
        let mut out = xhat;
        for row in out.chunks_mut(d) {
            for ((v, g), b) in row.iter_mut().zip(tg.data()).zip(tb.data()) {
                *v = *v * g + b;
            }
        }
        let value = Tensor::new(vec![n, d], out)?;
        let op = Op::InstanceNorm {
            x,
            gamma,
            beta,
            inv_std,
            floored,
        };
        self.push("instance_norm", value, op, &[x, gamma, beta])
    }

    /// `[n, heads*dk] -> [heads, n, dk]`
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var, TensorError> {
        let tx = &self.values[x.0];
        let &[n, width] = tx.shape() else {
            return Err(TensorError::Invalid {
                op: "split_heads",
                reason: format!("expected rank 2, got {:?}", tx.shape()),
            });
        };
        if heads == 0 || width % heads != 0 {
            return Err(TensorError::Invalid {
                op: "split_heads",
                reason: format!("width {width} not divisible by {heads} heads"),
            });
        }
        let dk = width / heads;
        let mut out = vec![0.0; n * width];
        for i in 0..n {
            for h in 0..heads {
                out[(h * n + i) * dk..(h * n + i + 1) * dk]
                    .copy_from_slice(&tx.data()[i * width + h * dk..i * width + (h + 1) * dk]);
            }
        }
        let value = Tensor::new(vec![heads, n, dk], out)?;
        self.push("split_heads", value, Op::SplitHeads { x, heads }, &[x])
    }

    /// `[heads, n, dk] -> [n, heads*dk]`
    pub fn merge_heads(&mut self, x: Var) -> Result<Var, TensorError> {
        let tx = &self.values[x.0];
        let &[heads, n, dk] = tx.shape() else {
            return Err(TensorError::Invalid {
                op: "merge_heads",
                reason: format!("expected rank 3, got {:?}", tx.shape()),
            });
        };
        let width = heads * dk;
        let mut out = vec![0.0; n * width];
        for h in 0..heads {
            for i in 0..n {
                out[i * width + h * dk..i * width + (h + 1) * dk]
                    .copy_from_slice(&tx.data()[(h * n + i) * dk..(h * n + i + 1) * dk]);
            }
        }
        let value = Tensor::new(vec![n, width], out)?;
        self.push("merge_heads", value, Op::MergeHeads(x), &[x])
    }

    /// Per-head element-wise MLP mixing attention scores with external
    /// features.
    ///
    /// `scores[h, q, k]`, `feats[f, q, k]`, `w1[h, f+1, hidden]`,
    /// `b1[h, hidden]`, `w2[h, hidden]`, `b2[h]`. Each head maps
    /// `(score, feat_1, .., feat_f)` through a ReLU hidden layer to one value.
    pub fn score_mixer(
        &mut self,
        scores: Var,
        feats: Arc<Tensor>,
        w1: Var,
        b1: Var,
        w2: Var,
        b2: Var,
    ) -> Result<Var, TensorError> {
        let ts = &self.values[scores.0];
        let &[heads, q, k] = ts.shape() else {
            return Err(mismatch("score_mixer", ts, &feats));
        };
        let &[f, fq, fk] = feats.shape() else {
            return Err(mismatch("score_mixer", ts, &feats));
        };
        if fq != q || fk != k {
            return Err(mismatch("score_mixer", ts, &feats));
        }
        let tw1 = &self.values[w1.0];
        let &[wh, wi, hidden] = tw1.shape() else {
            return Err(mismatch("score_mixer", ts, tw1));
        };
        if wh != heads || wi != f + 1 {
            return Err(mismatch("score_mixer", ts, tw1));
        }
        let (tb1, tw2, tb2) = (&self.values[b1.0], &self.values[w2.0], &self.values[b2.0]);
        if tb1.len() != heads * hidden || tw2.len() != heads * hidden || tb2.len() != heads {
            return Err(mismatch("score_mixer", tw1, tw2));
        }
        let e = q * k;
        let mut out = vec![0.0; heads * e];
        let mut pre = vec![0.0; hidden];
        for h in 0..heads {
            let w1h = &tw1.data()[h * (f + 1) * hidden..(h + 1) * (f + 1) * hidden];
            let b1h = &tb1.data()[h * hidden..(h + 1) * hidden];
            let w2h = &tw2.data()[h * hidden..(h + 1) * hidden];
            let b2h = tb2.data()[h];
            for idx in 0..e {
                let s = ts.data()[h * e + idx];
                pre.copy_from_slice(b1h);
                for (u, p) in pre.iter_mut().enumerate() {
                    *p += s * w1h[u];
                }
                for fi in 0..f {
                    let x = feats.data()[fi * e + idx];
                    let row = &w1h[(fi + 1) * hidden..(fi + 2) * hidden];
                    for (p, w) in pre.iter_mut().zip(row) {
                        *p += x * w;
                    }
                }
                let mut acc = b2h;
                for (p, w) in pre.iter().zip(w2h) {
                    if *p > 0.0 {
                        acc += p * w;
                    }
                }
                out[h * e + idx] = acc;
            }
        }
        let value = Tensor::new(vec![heads, q, k], out)?;
        let op = Op::ScoreMixer {
            scores,
            feats,
            w1,
            b1,
            w2,
            b2,
        };
        self.push("score_mixer", value, op, &[scores, w1, b1, w2, b2])
    }

    /// Selects rows of `x[n, d]` by index (embedding lookup).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let tx = &self.values[x.0];
        let &[n, d] = tx.shape() else {
            return Err(TensorError::Invalid {
                op: "gather_rows",
                reason: format!("expected rank 2, got {:?}", tx.shape()),
            });
        };
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            if i >= n {
                return Err(TensorError::Invalid {
                    op: "gather_rows",
                    reason: format!("row {i} out of range for {n} rows"),
                });
            }
            data.extend_from_slice(tx.row(i));
        }
        let value = Tensor::new(vec![idx.len(), d], data)?;
        let op = Op::GatherRows {
            x,
            idx: idx.to_vec(),
        };
        self.push("gather_rows", value, op, &[x])
    }

    /// `out[b] = ln p[b, idx[b]]` for a probability matrix `p[B, C]`.
    pub fn pick_log(&mut self, p: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let tp = &self.values[p.0];
        let &[b, c] = tp.shape() else {
            return Err(TensorError::Invalid {
                op: "pick_log",
                reason: format!("expected rank 2, got {:?}", tp.shape()),
            });
        };
        if idx.len() != b || idx.iter().any(|&i| i >= c) {
            return Err(TensorError::Invalid {
                op: "pick_log",
                reason: format!("{} picks for {b} rows of {c}", idx.len()),
            });
        }
        let data = idx
            .iter()
            .enumerate()
            .map(|(r, &i)| libm::log(tp.data()[r * c + i]))
            .collect();
        let value = Tensor::new(vec![b], data)?;
        let op = Op::PickLog {
            p,
            idx: idx.to_vec(),
        };
        self.push("pick_log", value, op, &[p])
    }

    /// `sum_i x[i] * w[i]` with constant weights.
    pub fn dot_const(&mut self, x: Var, w: &[f64]) -> Result<Var, TensorError> {
        let tx = &self.values[x.0];
        if tx.len() != w.len() {
            return Err(TensorError::ShapeMismatch {
                op: "dot_const",
                left: tx.shape().to_vec(),
                right: vec![w.len()],
            });
        }
        let v = tx.data().iter().zip(w).map(|(a, b)| a * b).sum();
        let op = Op::DotConst { x, w: w.to_vec() };
        self.push("dot_const", Tensor::scalar(v), op, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.values[x.0].data().iter().sum();
        self.push("sum", Tensor::scalar(v), Op::Sum(x), &[x])
    }

    /// Reverse pass from a one-element `loss`. Parameters that the loss does
    /// not reach receive zero gradients.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients, TensorError> {
        let lv = &self.values[loss.0];
        if lv.len() != 1 {
            return Err(TensorError::NotScalar {
                shape: lv.shape().to_vec(),
            });
        }
        let mut out: Vec<Tensor> = store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.needs_grad[i] {
                continue;
            }
            self.backward_node(i, &g, &mut grads, &mut out)?;
        }
        Ok(Gradients::from_vec(out))
    }

    fn backward_node(
        &self,
        i: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut [Tensor],
    ) -> Result<(), TensorError> {
        let values = &self.values;
        let needs = &self.needs_grad;
        // Gradient buffer for an input, or None if it does not lead to a param.
        macro_rules! buf {
            ($v:expr) => {{
                let v: Var = $v;
                if needs[v.0] {
                    Some(grads[v.0].get_or_insert_with(|| vec![0.0; values[v.0].len()]).as_mut_slice())
                } else {
                    None
                }
            }};
        }
        let y = &values[i];
        match &self.ops[i] {
            Op::Leaf => {}
            Op::Param(id) => {
                for (o, v) in out[id.0].data_mut().iter_mut().zip(g) {
                    *o += v;
                }
            }
            Op::MatMul { a, b, trans_b } => {
                let (ta, tb) = (&values[a.0], &values[b.0]);
                let (batch, ab, bb, m, k, n) = mm_dims(ta.shape(), tb.shape(), *trans_b)
                    .ok_or_else(|| mismatch("matmul", ta, tb))?;
                if let Some(da) = buf!(*a) {
                    for t in 0..batch {
                        let gc = &g[t * m * n..(t + 1) * m * n];
                        let bo = if bb { t * k * n } else { 0 };
                        let ao = if ab { t * m * k } else { 0 };
                        let da = &mut da[ao..ao + m * k];
                        if *trans_b {
                            gemm_nn(gc, &tb.data()[bo..], da, m, n, k);
                        } else {
                            gemm_nt(gc, &tb.data()[bo..], da, m, n, k);
                        }
                    }
                }
                if let Some(db) = buf!(*b) {
                    for t in 0..batch {
                        let gc = &g[t * m * n..(t + 1) * m * n];
                        let ao = if ab { t * m * k } else { 0 };
                        let bo = if bb { t * k * n } else { 0 };
                        let db = &mut db[bo..bo + k * n];
                        if *trans_b {
                            gemm_tn(gc, &ta.data()[ao..], db, n, m, k);
                        } else {
                            gemm_tn(&ta.data()[ao..], gc, db, k, m, n);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = buf!(*a) {
                    add_into(da, g);
                }
                if let Some(db) = buf!(*b) {
                    add_into(db, g);
                }
            }
            Op::AddBias(x, bias) => {
                if let Some(dx) = buf!(*x) {
                    add_into(dx, g);
                }
                if let Some(db) = buf!(*bias) {
                    let d = db.len();
                    for row in g.chunks(d) {
                        add_into(db, row);
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(dx) = buf!(*x) {
                    for (d, v) in dx.iter_mut().zip(g) {
                        *d += c * v;
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(dx) = buf!(*x) {
                    for ((d, v), yv) in dx.iter_mut().zip(g).zip(y.data()) {
                        if *yv > 0.0 {
                            *d += v;
                        }
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(dx) = buf!(*x) {
                    for ((d, v), yv) in dx.iter_mut().zip(g).zip(y.data()) {
                        *d += v * (1.0 - yv * yv);
                    }
                }
            }
            Op::SoftClip(x, c) => {
                if let Some(dx) = buf!(*x) {
                    for ((d, v), yv) in dx.iter_mut().zip(g).zip(y.data()) {
                        let t = yv / c;
                        *d += v * (1.0 - t * t);
                    }
                }
            }
            Op::ConcatLast(a, b) => {
                let (ca, cb) = (values[a.0].shape()[1], values[b.0].shape()[1]);
                let w = ca + cb;
                if let Some(da) = buf!(*a) {
                    for (r, row) in g.chunks(w).enumerate() {
                        add_into(&mut da[r * ca..(r + 1) * ca], &row[..ca]);
                    }
                }
                if let Some(db) = buf!(*b) {
                    for (r, row) in g.chunks(w).enumerate() {
                        add_into(&mut db[r * cb..(r + 1) * cb], &row[ca..]);
                    }
                }
            }
            Op::ConcatRows(a, b) => {
                let na = values[a.0].len();
                if let Some(da) = buf!(*a) {
                    add_into(da, &g[..na]);
                }
                if let Some(db) = buf!(*b) {
                    add_into(db, &g[na..]);
                }
            }
            Op::MaskedSoftmax(x) => {
                if let Some(dx) = buf!(*x) {
                    let c = *y.shape().last().unwrap_or(&1);
                    for ((dxr, gr), yr) in dx.chunks_mut(c).zip(g.chunks(c)).zip(y.data().chunks(c)) {
                        let s: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((d, gv), yv) in dxr.iter_mut().zip(gr).zip(yr) {
                            *d += yv * (gv - s);
                        }
                    }
                }
            }
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                inv_std,
                floored,
            } => {
                let tx = &values[x.0];
                let tg = &values[gamma.0];
                let (n, d) = (tx.shape()[0], tx.shape()[1]);
                // Recover xhat from the output: y = xhat * gamma + beta is not
                // invertible when gamma == 0, so recompute it.
                let (xhat, _, _) = normalize_columns(tx.data(), n, d);
                if let Some(db) = buf!(*beta) {
                    for row in g.chunks(d) {
                        add_into(db, row);
                    }
                }
                if let Some(dg) = buf!(*gamma) {
                    for (gr, xr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for ((o, gv), xv) in dg.iter_mut().zip(gr).zip(xr) {
                            *o += gv * xv;
                        }
                    }
                }
                if let Some(dx) = buf!(*x) {
                    let inv_n = 1.0 / n as f64;
                    for c in 0..d {
                        let gam = tg.data()[c];
                        let mut mean_g = 0.0;
                        let mut mean_gx = 0.0;
                        for r in 0..n {
                            let dxh = g[r * d + c] * gam;
                            mean_g += dxh;
                            mean_gx += dxh * xhat[r * d + c];
                        }
                        mean_g *= inv_n;
                        mean_gx *= inv_n;
                        for r in 0..n {
                            let dxh = g[r * d + c] * gam;
                            let corr = if floored[c] { 0.0 } else { xhat[r * d + c] * mean_gx };
                            dx[r * d + c] += inv_std[c] * (dxh - mean_g - corr);
                        }
                    }
                }
            }
            Op::SplitHeads { x, heads } => {
                if let Some(dx) = buf!(*x) {
                    let (h, n, dk) = (*heads, y.shape()[1], y.shape()[2]);
                    let width = h * dk;
                    for hh in 0..h {
                        for r in 0..n {
                            add_into(
                                &mut dx[r * width + hh * dk..r * width + (hh + 1) * dk],
                                &g[(hh * n + r) * dk..(hh * n + r + 1) * dk],
                            );
                        }
                    }
                }
            }
            Op::MergeHeads(x) => {
                if let Some(dx) = buf!(*x) {
                    let s = values[x.0].shape();
                    let (h, n, dk) = (s[0], s[1], s[2]);
                    let width = h * dk;
                    for hh in 0..h {
                        for r in 0..n {
                            add_into(
                                &mut dx[(hh * n + r) * dk..(hh * n + r + 1) * dk],
                                &g[r * width + hh * dk..r * width + (hh + 1) * dk],
                            );
                        }
                    }
                }
            }
            Op::ScoreMixer {
                scores,
                feats,
                w1,
                b1,
                w2,
                b2,
            } => self.backward_mixer(g, grads, *scores, feats, [*w1, *b1, *w2, *b2]),
            Op::GatherRows { x, idx } => {
                if let Some(dx) = buf!(*x) {
                    let d = values[x.0].shape()[1];
                    for (r, &src) in idx.iter().enumerate() {
                        add_into(&mut dx[src * d..(src + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::PickLog { p, idx } => {
                if let Some(dp) = buf!(*p) {
                    let tp = &values[p.0];
                    let c = tp.shape()[1];
                    for (r, &j) in idx.iter().enumerate() {
                        dp[r * c + j] += g[r] / tp.data()[r * c + j];
                    }
                }
            }
            Op::DotConst { x, w } => {
                if let Some(dx) = buf!(*x) {
                    for (d, wv) in dx.iter_mut().zip(w) {
                        *d += g[0] * wv;
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = buf!(*x) {
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                }
            }
        }
        Ok(())
    }

    fn backward_mixer(
        &self,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        scores: Var,
        feats: &Tensor,
        [w1, b1, w2, b2]: [Var; 4],
    ) {
        let values = &self.values;
        let ts = &values[scores.0];
        let (heads, q, k) = (ts.shape()[0], ts.shape()[1], ts.shape()[2]);
        let f = feats.shape()[0];
        let hidden = values[w1.0].shape()[2];
        let (tw1, tb1, tw2) = (&values[w1.0], &values[b1.0], &values[w2.0]);
        let e = q * k;
        let mut take = |v: Var| -> Option<Vec<f64>> {
            if self.needs_grad[v.0] {
                Some(grads[v.0].take().unwrap_or_else(|| vec![0.0; values[v.0].len()]))
            } else {
                None
            }
        };
        let mut ds = take(scores);
        let mut dw1 = take(w1);
        let mut db1 = take(b1);
        let mut dw2 = take(w2);
        let mut db2 = take(b2);
        let mut pre = vec![0.0; hidden];
        let mut dpre = vec![0.0; hidden];
        for h in 0..heads {
            let w1h = &tw1.data()[h * (f + 1) * hidden..(h + 1) * (f + 1) * hidden];
            let b1h = &tb1.data()[h * hidden..(h + 1) * hidden];
            let w2h = &tw2.data()[h * hidden..(h + 1) * hidden];
            for idx in 0..e {
                let go = g[h * e + idx];
                if go == 0.0 {
                    continue;
                }
                let s = ts.data()[h * e + idx];
                pre.copy_from_slice(b1h);
                for (u, p) in pre.iter_mut().enumerate() {
                    *p += s * w1h[u];
                }
                for fi in 0..f {
                    let x = feats.data()[fi * e + idx];
                    for (p, w) in pre.iter_mut().zip(&w1h[(fi + 1) * hidden..(fi + 2) * hidden]) {
                        *p += x * w;
                    }
                }
                if let Some(db2) = db2.as_mut() {
                    db2[h] += go;
                }
                for u in 0..hidden {
                    let active = pre[u] > 0.0;
                    if let Some(dw2) = dw2.as_mut() {
                        if active {
                            dw2[h * hidden + u] += go * pre[u];
                        }
                    }
                    dpre[u] = if active { go * w2h[u] } else { 0.0 };
                }
                if let Some(db1) = db1.as_mut() {
                    add_into(&mut db1[h * hidden..(h + 1) * hidden], &dpre);
                }
                if let Some(dw1) = dw1.as_mut() {
                    let base = h * (f + 1) * hidden;
                    for (u, dp) in dpre.iter().enumerate() {
                        dw1[base + u] += dp * s;
                    }
                    for fi in 0..f {
                        let x = feats.data()[fi * e + idx];
                        let row = &mut dw1[base + (fi + 1) * hidden..base + (fi + 2) * hidden];
                        for (o, dp) in row.iter_mut().zip(&dpre) {
                            *o += dp * x;
                        }
                    }
                }
                if let Some(ds) = ds.as_mut() {
                    ds[h * e + idx] += kernels::dot(&dpre, &w1h[..hidden]);
                }
            }
        }
        for (v, buf) in [(scores, ds), (w1, dw1), (b1, db1), (w2, dw2), (b2, db2)] {
            if let Some(buf) = buf {
                grads[v.0] = Some(buf);
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Column-wise normalization of `x[n, d]`; returns (xhat, 1/std, floored).
fn normalize_columns(x: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let inv_n = 1.0 / n as f64;
    let mut mean = vec![0.0; d];
    for row in x.chunks(d) {
        add_into(&mut mean, row);
    }
    for m in &mut mean {
        *m *= inv_n;
    }
    let mut var = vec![0.0; d];
    for row in x.chunks(d) {
        for ((v, xv), m) in var.iter_mut().zip(row).zip(&mean) {
            let c = xv - m;
            *v += c * c;
        }
    }
    let mut inv_std = vec![0.0; d];
    let mut floored = vec![false; d];
    for c in 0..d {
        let v = var[c] * inv_n;
        floored[c] = v < NORM_EPS;
        inv_std[c] = 1.0 / libm::sqrt(v.max(NORM_EPS));
    }
    let mut xhat = vec![0.0; n * d];
    for (orow, row) in xhat.chunks_mut(d).zip(x.chunks(d)) {
        for c in 0..d {
            orow[c] = (row[c] - mean[c]) * inv_std[c];
        }
    }
    (xhat, inv_std, floored)
}
