//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] borrows a [`ParamStore`] and records every operation applied to
//! parameters and constants in forward order. [`Graph::backward`] replays the
//! tape in reverse and returns one dense gradient per parameter, zeros for
//! parameters the loss does not reach.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{self, Tensor};

/// Additive bias applied to masked attention scores.
pub const MASK_BIAS: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    Param(ParamId),
    Node(usize),
}

/// One independent attention problem inside a packed query/key matrix.
///
/// Queries `q_start..q_start + q_len` attend to keys `k_start..k_start + k_len`.
/// `open`, when present, is a row-major `q_len × k_len` table; closed entries
/// receive [`MASK_BIAS`]. A query row whose keys are all closed outputs zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnBlock {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
    pub open: Option<Vec<bool>>,
}

impl AttnBlock {
    pub fn dense(q_start: usize, q_len: usize, k_start: usize, k_len: usize) -> Self {
        AttnBlock { q_start, q_len, k_start, k_len, open: None }
    }

    pub fn masked(q_start: usize, k_start: usize, mask: &crate::model::Mask) -> Self {
        AttnBlock {
            q_start,
            q_len: mask.rows(),
            k_start,
            k_len: mask.cols(),
            open: Some(mask.as_slice().to_vec()),
        }
    }

    fn is_open(&self, i: usize, j: usize) -> bool {
        self.open.as_ref().is_none_or(|m| m[i * self.k_len + j])
    }
}

enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sum(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, xhat: Vec<f64>, inv_std: Vec<f64>, bias: Var },
    Gather { table: Var, ids: Vec<usize> },
    Attention { q: Var, k: Var, v: Var, blocks: Rc<[AttnBlock]>, heads: usize, probs: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<f64>, probs: Vec<f64> },
    Dropout { x: Var, keep: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    dropout_rng: Option<ChaCha8Rng>,
    non_finite: Option<&'static str>,
}

/// Dense per-parameter gradients, indexed like the owning [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Gradients { grads: params.ids().map(|id| Tensor::zeros(params.get(id).shape())).collect() }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl<'p> Graph<'p> {
    /// A graph with dropout disabled.
    pub fn new(params: &'p ParamStore) -> Self {
        Graph { params, nodes: Vec::new(), dropout_rng: None, non_finite: None }
    }

    /// A graph whose [`Graph::dropout`] calls draw masks from `rng`.
    pub fn with_dropout(params: &'p ParamStore, rng: ChaCha8Rng) -> Self {
        Graph { params, nodes: Vec::new(), dropout_rng: Some(rng), non_finite: None }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn param(&self, id: ParamId) -> Var {
        Var::Param(id)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, "constant")
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match v {
            Var::Param(id) => self.params.get(id),
            Var::Node(i) => &self.nodes[i].value,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Fails if any recorded operation produced NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.non_finite {
            Some(op) => Err(Error::NonFinite(op)),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(name);
        }
        self.nodes.push(Node { value, op });
        Var::Node(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::Matmul(a, b), "matmul"))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::Shape(format!("add {:?} + {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b), "add"))
    }

    /// Adds a length-`d` vector to every row of an `n × d` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let d = xv.cols();
        if bv.numel() != d {
            return Err(Error::Shape(format!("add_row {:?} + {:?}", xv.shape(), bv.shape())));
        }
        let mut value = xv.clone();
        if d > 0 {
            for row in value.data_mut().chunks_mut(d) {
                row.iter_mut().zip(bv.data()).for_each(|(r, b)| *r += b);
            }
        }
        Ok(self.push(value, Op::AddRow(x, bias), "add_row"))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::Shape(format!("mul {:?} * {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b), "mul"))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let src = self.value(x);
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|v| v * c).collect())
            .expect("same shape");
        self.push(value, Op::Scale(x, c), "scale")
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|v| v.max(0.0)).collect())
            .expect("same shape");
        self.push(value, Op::Relu(x), "relu")
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x), "sum")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let value = tensor::softmax_rows(self.value(x));
        self.push(value, Op::Softmax(x), "softmax")
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (value, xhat, inv_std) = tensor::layer_norm_rows(
            self.value(x),
            self.value(gain).data(),
            self.value(bias).data(),
            eps,
        )?;
        Ok(self.push(value, Op::LayerNorm { x, gain, xhat, inv_std, bias }, "layer_norm"))
    }

    /// Row lookup: output row `r` is row `ids[r]` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, d) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(Error::Input(format!("row id {id} out of range for {rows} rows")));
            }
            data.extend_from_slice(t.row(id));
        }
        let value = Tensor::matrix(ids.len(), d, data)?;
        Ok(self.push(value, Op::Gather { table, ids: ids.to_vec() }, "gather"))
    }

    /// Inverted dropout with drop probability `p`. Identity when the graph was
    /// built without a dropout RNG or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if p <= 0.0 || self.dropout_rng.is_none() {
            return x;
        }
        let n = self.value(x).numel();
        let rng = self.dropout_rng.as_mut().expect("checked above");
        let scale = 1.0 / (1.0 - p);
        let keep: Vec<f64> =
            (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale }).collect();
        let src = self.value(x);
        let data = src.data().iter().zip(&keep).map(|(v, k)| v * k).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Dropout { x, keep }, "dropout")
    }

    /// Multi-head scaled dot-product attention over packed rows.
    ///
    /// `q` is `nq × d`, `k` and `v` are `nk × d`; head `h` uses columns
    /// `h·d/heads .. (h+1)·d/heads`. Query rows not covered by any block
    /// output zeros.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        blocks: Rc<[AttnBlock]>,
        heads: usize,
    ) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        if heads == 0 || d % heads != 0 {
            return Err(Error::Shape(format!("{d} features not divisible into {heads} heads")));
        }
        if kv.cols() != d || vv.cols() != d || kv.rows() != vv.rows() {
            return Err(Error::Shape(format!(
                "attention q {:?} k {:?} v {:?}",
                qv.shape(),
                kv.shape(),
                vv.shape()
            )));
        }
        let (nq, nk) = (qv.rows(), kv.rows());
        for b in blocks.iter() {
            if b.q_start + b.q_len > nq || b.k_start + b.k_len > nk {
                return Err(Error::Shape(format!(
                    "attention block {}+{} / {}+{} exceeds {} queries / {} keys",
                    b.q_start, b.q_len, b.k_start, b.k_len, nq, nk
                )));
            }
            if let Some(open) = &b.open {
                if open.len() != b.q_len * b.k_len {
                    return Err(Error::Shape(format!(
                        "mask of {} entries for a {}x{} block",
                        open.len(),
                        b.q_len,
                        b.k_len
                    )));
                }
            }
        }
        let dk = d / heads;
        let inv_sqrt = 1.0 / (dk as f64).sqrt();
        let total: usize = blocks.iter().map(|b| b.q_len * b.k_len).sum::<usize>() * heads;
        let mut probs = vec![0.0; total];
        let mut out = vec![0.0; nq * d];
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        let mut offset = 0;
        let mut scores = Vec::new();
        for b in blocks.iter() {
            for h in 0..heads {
                let c0 = h * dk;
                for i in 0..b.q_len {
                    let qrow = &qd[(b.q_start + i) * d + c0..(b.q_start + i) * d + c0 + dk];
                    scores.clear();
                    let mut any_open = false;
                    for j in 0..b.k_len {
                        let krow = &kd[(b.k_start + j) * d + c0..(b.k_start + j) * d + c0 + dk];
                        let dot: f64 = qrow.iter().zip(krow).map(|(x, y)| x * y).sum();
                        let open = b.is_open(i, j);
                        any_open |= open;
                        scores.push(dot * inv_sqrt + if open { 0.0 } else { MASK_BIAS });
                    }
                    if !any_open {
                        continue;
                    }
                    let prow = &mut probs[offset + i * b.k_len..offset + (i + 1) * b.k_len];
                    tensor::softmax_into(&scores, prow);
                    let orow = &mut out[(b.q_start + i) * d + c0..(b.q_start + i) * d + c0 + dk];
                    for (j, &p) in prow.iter().enumerate() {
                        if p == 0.0 {
                            continue;
                        }
                        let vrow = &vd[(b.k_start + j) * d + c0..(b.k_start + j) * d + c0 + dk];
                        orow.iter_mut().zip(vrow).for_each(|(o, x)| *o += p * x);
                    }
                }
                offset += b.q_len * b.k_len;
            }
        }
        let value = Tensor::matrix(nq, d, out)?;
        Ok(self.push(value, Op::Attention { q, k, v, blocks, heads, probs }, "attention"))
    }

    /// Summed, weighted token cross-entropy `Σ_r w_r · −log softmax(logits_r)[t_r]`.
    /// Rows with zero weight are skipped entirely.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let lv = self.value(logits);
        let (n, vocab) = (lv.rows(), lv.cols());
        if targets.len() != n || weights.len() != n {
            return Err(Error::Shape(format!(
                "cross_entropy over {n} rows with {} targets / {} weights",
                targets.len(),
                weights.len()
            )));
        }
        let mut probs = vec![0.0; n * vocab];
        let mut total = 0.0;
        let mut logp = vec![0.0; vocab];
        for r in 0..n {
            if weights[r] == 0.0 {
                continue;
            }
            if targets[r] >= vocab {
                return Err(Error::Input(format!("target {} outside vocabulary {vocab}", targets[r])));
            }
            tensor::log_softmax_into(lv.row(r), &mut logp);
            total -= weights[r] * logp[targets[r]];
            for (p, l) in probs[r * vocab..(r + 1) * vocab].iter_mut().zip(&logp) {
                *p = l.exp();
            }
        }
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            weights: weights.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::scalar(total), op, "cross_entropy"))
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check_finite()?;
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut acc = GradAcc {
            leaf: self.nodes.iter().map(|n| matches!(n.op, Op::Leaf)).collect(),
            nodes: (0..self.nodes.len()).map(|_| None).collect(),
            params: (0..self.params.len()).map(|_| None).collect(),
        };
        let start = match loss {
            Var::Param(id) => {
                acc.params[id.0] = Some(vec![1.0]);
                None
            }
            Var::Node(i) => {
                acc.nodes[i] = Some(vec![1.0]);
                Some(i)
            }
        };
        if let Some(start) = start {
            for i in (0..=start).rev() {
                let Some(g) = acc.nodes[i].take() else { continue };
                self.backprop_node(i, &g, &mut acc);
            }
        }
        let grads = self
            .params
            .ids()
            .map(|id| {
                let shape = self.params.get(id).shape().to_vec();
                match acc.params[id.0].take() {
                    Some(data) => Tensor::new(shape, data).expect("gradient shape"),
                    None => Tensor::zeros(&shape),
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &[f64], acc: &mut GradAcc) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if acc.wants(*a) {
                    let buf = acc.buf(*a, m * k);
                    tensor::gemm_a_bt(m, n, k, g, bv.data(), 1.0, buf);
                }
                if acc.wants(*b) {
                    let buf = acc.buf(*b, k * n);
                    tensor::gemm_at_b(k, m, n, av.data(), g, 1.0, buf);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if acc.wants(v) {
                        add_into(acc.buf(v, g.len()), g);
                    }
                }
            }
            Op::AddRow(x, bias) => {
                if acc.wants(*x) {
                    add_into(acc.buf(*x, g.len()), g);
                }
                if acc.wants(*bias) {
                    let d = self.value(*bias).numel();
                    let buf = acc.buf(*bias, d);
                    if d > 0 {
                        for row in g.chunks(d) {
                            add_into(buf, row);
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if acc.wants(*a) {
                    let buf = acc.buf(*a, g.len());
                    for ((o, gi), y) in buf.iter_mut().zip(g).zip(bv) {
                        *o += gi * y;
                    }
                }
                if acc.wants(*b) {
                    let buf = acc.buf(*b, g.len());
                    for ((o, gi), x) in buf.iter_mut().zip(g).zip(av) {
                        *o += gi * x;
                    }
                }
            }
            Op::Scale(x, c) => {
                if acc.wants(*x) {
                    let buf = acc.buf(*x, g.len());
                    buf.iter_mut().zip(g).for_each(|(o, gi)| *o += c * gi);
                }
            }
            Op::Relu(x) => {
                if acc.wants(*x) {
                    let xv = self.value(*x).data();
                    let buf = acc.buf(*x, g.len());
                    for ((o, gi), xi) in buf.iter_mut().zip(g).zip(xv) {
                        if *xi > 0.0 {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if acc.wants(*x) {
                    let n = self.value(*x).numel();
                    let buf = acc.buf(*x, n);
                    buf.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Softmax(x) => {
                if acc.wants(*x) {
                    let y = &node.value;
                    let c = y.cols();
                    let buf = acc.buf(*x, g.len());
                    if c > 0 {
                        for ((yr, gr), or) in y.data().chunks(c).zip(g.chunks(c)).zip(buf.chunks_mut(c)) {
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for j in 0..c {
                                or[j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, xhat, inv_std, bias } => {
                let gv = self.value(*gain).data();
                let c = gv.len();
                if acc.wants(*gain) {
                    let buf = acc.buf(*gain, c);
                    for (gr, hr) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            buf[j] += gr[j] * hr[j];
                        }
                    }
                }
                if acc.wants(*bias) {
                    let buf = acc.buf(*bias, c);
                    for gr in g.chunks(c) {
                        add_into(buf, gr);
                    }
                }
                if acc.wants(*x) {
                    let buf = acc.buf(*x, g.len());
                    let mut dh = vec![0.0; c];
                    for (r, ((gr, hr), or)) in
                        g.chunks(c).zip(xhat.chunks(c)).zip(buf.chunks_mut(c)).enumerate()
                    {
                        for j in 0..c {
                            dh[j] = gr[j] * gv[j];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / c as f64;
                        let mean_dh_h = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        let inv = inv_std[r];
                        for j in 0..c {
                            or[j] += inv * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                if acc.wants(*table) {
                    let t = self.value(*table);
                    let d = t.cols();
                    let buf = acc.buf(*table, t.numel());
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut buf[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::Dropout { x, keep } => {
                if acc.wants(*x) {
                    let buf = acc.buf(*x, g.len());
                    for ((o, gi), k) in buf.iter_mut().zip(g).zip(keep) {
                        *o += gi * k;
                    }
                }
            }
            Op::CrossEntropy { logits, targets, weights, probs } => {
                if acc.wants(*logits) {
                    let lv = self.value(*logits);
                    let vocab = lv.cols();
                    let buf = acc.buf(*logits, lv.numel());
                    for r in 0..targets.len() {
                        let w = weights[r];
                        if w == 0.0 {
                            continue;
                        }
                        let row = &mut buf[r * vocab..(r + 1) * vocab];
                        let p = &probs[r * vocab..(r + 1) * vocab];
                        for j in 0..vocab {
                            row[j] += g[0] * w * p[j];
                        }
                        row[targets[r]] -= g[0] * w;
                    }
                }
            }
            Op::Attention { q, k, v, blocks, heads, probs } => {
                self.backprop_attention(*q, *k, *v, blocks, *heads, probs, g, acc);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_attention(
        &self,
        q: Var,
        k: Var,
        v: Var,
        blocks: &[AttnBlock],
        heads: usize,
        probs: &[f64],
        g: &[f64],
        acc: &mut GradAcc,
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        let dk = d / heads;
        let inv_sqrt = 1.0 / (dk as f64).sqrt();
        let mut dq = vec![0.0; qv.numel()];
        let mut dkey = vec![0.0; kv.numel()];
        let mut dv = vec![0.0; vv.numel()];
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        let mut offset = 0;
        let mut ds = Vec::new();
        for b in blocks {
            for h in 0..heads {
                let c0 = h * dk;
                for i in 0..b.q_len {
                    let prow = &probs[offset + i * b.k_len..offset + (i + 1) * b.k_len];
                    let qi = (b.q_start + i) * d + c0;
                    let grow = &g[qi..qi + dk];
                    ds.clear();
                    let mut dot = 0.0;
                    for (j, &p) in prow.iter().enumerate() {
                        let vj = (b.k_start + j) * d + c0;
                        let dp: f64 = grow.iter().zip(&vd[vj..vj + dk]).map(|(x, y)| x * y).sum();
                        ds.push(dp);
                        dot += p * dp;
                        if p != 0.0 {
                            dv[vj..vj + dk].iter_mut().zip(grow).for_each(|(o, x)| *o += p * x);
                        }
                    }
                    for (j, &p) in prow.iter().enumerate() {
                        let s = p * (ds[j] - dot) * inv_sqrt;
                        if s == 0.0 {
                            continue;
                        }
                        let kj = (b.k_start + j) * d + c0;
                        for t in 0..dk {
                            dq[qi + t] += s * kd[kj + t];
                            dkey[kj + t] += s * qd[qi + t];
                        }
                    }
                }
                offset += b.q_len * b.k_len;
            }
        }
        for (var, grad) in [(q, dq), (k, dkey), (v, dv)] {
            if acc.wants(var) {
                let n = grad.len();
                add_into(acc.buf(var, n), &grad);
            }
        }
    }
}

struct GradAcc {
    leaf: Vec<bool>,
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<Option<Vec<f64>>>,
}

impl GradAcc {
    /// Constants never need a gradient.
    fn wants(&self, v: Var) -> bool {
        match v {
            Var::Param(_) => true,
            Var::Node(i) => !self.leaf[i],
        }
    }

    fn buf(&mut self, v: Var, n: usize) -> &mut Vec<f64> {
        let slot = match v {
            Var::Param(id) => &mut self.params[id.0],
            Var::Node(i) => &mut self.nodes[i],
        };
        slot.get_or_insert_with(|| vec![0.0; n])
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
