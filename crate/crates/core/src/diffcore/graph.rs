//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every op appends a node to the tape and eagerly computes its value, so
//! node order is already a topological order. `backward` walks the tape once
//! in reverse.

use super::params::{GradVector, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row-major allow/forbid mask for [`Graph::masked_softmax`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allow: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allow: Vec<bool>) -> Result<Self> {
        if allow.len() != rows * cols {
            return Err(Error::Shape {
                op: "mask",
                left: vec![rows, cols],
                right: vec![allow.len()],
            });
        }
        Ok(Self { rows, cols, allow })
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            allow: vec![true; rows * cols],
        }
    }

    /// Row `i` may attend columns `0..=i`.
    pub fn causal(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| j <= i)
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allow = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                allow.push(f(i, j));
            }
        }
        Self { rows, cols, allow }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn allowed(&self, row: usize, col: usize) -> bool {
        self.allow[row * self.cols + col]
    }

    pub fn forbid(&mut self, row: usize, col: usize) {
        self.allow[row * self.cols + col] = false;
    }
}

enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Gather(Var, Vec<usize>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    MaskedSoftmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        eps: f64,
        probs: Vec<f64>,
    },
    Sum(Var),
    MeanRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

const LN_EPS: f64 = 1e-6;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// One recorded forward pass against a parameter store.
pub struct Graph<'p> {
    params: &'p ParamStore,
    param_nodes: Vec<Option<Var>>,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            param_nodes: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes[v.0].value.shape().to_vec()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Parameter leaf; repeated lookups return the same node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let idx = self
            .params
            .index_of(name)
            .ok_or_else(|| Error::UnknownParam(name.to_owned()))?;
        if let Some(v) = self.param_nodes[idx] {
            return Ok(v);
        }
        let value = self.params.by_index(idx).1.clone();
        let v = self.push(value, Op::Param(idx));
        self.param_nodes[idx] = Some(v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 || self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        let av = self.value(a).data();
        let bv = self.value(b).data();
        gemm(m, k, n, av, false, bv, false, &mut out);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b)))
    }

    /// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 || self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return Err(self.mismatch("matmul_t", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), true, &mut out);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("add", a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    /// Adds a length-`n` bias to every row of an `[m, n]` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.dims(a);
        if self.value(bias).numel() != n {
            return Err(self.mismatch("add_bias", a, bias));
        }
        let b = self.value(bias).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            for (x, y) in row.iter_mut().zip(b) {
                *x += y;
            }
        }
        let t = Tensor::new(self.shape(a), data)?;
        Ok(self.push(t, Op::AddBias(a, bias)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let t = Tensor::new(self.shape(a), data)?;
        Ok(self.push(t, Op::Scale(a, c)))
    }

    /// Elementwise product with a constant tensor (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.value(a).numel() {
            return Err(Error::Shape {
                op: "mul_const",
                left: self.shape(a),
                right: vec![c.len()],
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(&c)
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        Ok(self.push(t, Op::MulConst(a, c)))
    }

    pub fn embedding_gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, d) = self.dims(table);
        let tv = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::OutOfRange {
                    what: "embedding table",
                    index: id,
                    len: vocab,
                });
            }
            data.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let t = Tensor::matrix(ids.len(), d, data)?;
        Ok(self.push(t, Op::Gather(table, ids.to_vec())))
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.value(gain).numel() != n {
            return Err(self.mismatch("layer_norm", x, gain));
        }
        if self.value(bias).numel() != n {
            return Err(self.mismatch("layer_norm", x, bias));
        }
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = g[c] * h + b[c];
            }
        }
        let t = Tensor::new(self.shape(x), out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()))
            .collect();
        let t = Tensor::new(self.shape(x), data)?;
        Ok(self.push(t, Op::Gelu(x)))
    }

    /// Row-wise softmax; forbidden entries get probability exactly zero.
    pub fn masked_softmax(&mut self, x: Var, mask: Option<&Mask>) -> Result<Var> {
        let (m, n) = self.dims(x);
        if let Some(mask) = mask {
            if mask.shape() != [m, n] {
                return Err(Error::Shape {
                    op: "masked_softmax",
                    left: vec![m, n],
                    right: mask.shape().to_vec(),
                });
            }
        }
        let xv = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let allowed = |c: usize| mask.map_or(true, |mk| mk.allowed(r, c));
            let mut max = f64::NEG_INFINITY;
            for c in 0..n {
                if allowed(c) {
                    max = max.max(xv[r * n + c]);
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::AllForbidden { row: r });
            }
            let mut z = 0.0;
            for c in 0..n {
                if allowed(c) {
                    let e = (xv[r * n + c] - max).exp();
                    out[r * n + c] = e;
                    z += e;
                }
            }
            for v in &mut out[r * n..(r + 1) * n] {
                *v /= z;
            }
        }
        let t = Tensor::new(self.shape(x), out)?;
        Ok(self.push(t, Op::MaskedSoftmax(x)))
    }

    /// Token-summed cross-entropy against targets smoothed by `eps`.
    ///
    /// The smoothed target puts `1 - eps + eps/V` on the gold class and
    /// `eps/V` on every other class.
    pub fn cross_entropy_with_label_smoothing(
        &mut self,
        logits: Var,
        targets: &[usize],
        eps: f64,
    ) -> Result<Var> {
        let (m, v) = self.dims(logits);
        if targets.len() != m {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: vec![m, v],
                right: vec![targets.len()],
            });
        }
        let zv = self.value(logits).data();
        let mut probs = vec![0.0; m * v];
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= v {
                return Err(Error::OutOfRange {
                    what: "cross_entropy target",
                    index: t,
                    len: v,
                });
            }
            let row = &zv[r * v..(r + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + z.ln();
            let off = eps / v as f64;
            let mut qz = 0.0;
            for (c, &x) in row.iter().enumerate() {
                probs[r * v + c] = (x - lse).exp();
                let q = if c == t { 1.0 - eps + off } else { off };
                qz += q * x;
            }
            loss += lse - qz;
        }
        let t = Tensor::scalar(loss);
        Ok(self.push(
            t,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                eps,
                probs,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(x)))
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if m == 0 {
            return Err(Error::Shape {
                op: "mean_rows",
                left: self.shape(x),
                right: vec![],
            });
        }
        let xv = self.value(x).data();
        let mut out = vec![0.0; n];
        for r in 0..m {
            for c in 0..n {
                out[c] += xv[r * n + c];
            }
        }
        for v in &mut out {
            *v /= m as f64;
        }
        Ok(self.push(Tensor::matrix(1, n, out)?, Op::MeanRows(x)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.dims(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != n {
                return Err(self.mismatch("concat_rows", parts[0], p));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::matrix(rows, n, data)?, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.dims(parts[0]).0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != m {
                return Err(self.mismatch("concat_cols", parts[0], p));
            }
            total += c;
        }
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.push(Tensor::matrix(m, total, data)?, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        if start + len > m {
            return Err(Error::OutOfRange {
                what: "slice_rows",
                index: start + len,
                len: m,
            });
        }
        let data = self.value(x).data()[start * n..(start + len) * n].to_vec();
        Ok(self.push(Tensor::matrix(len, n, data)?, Op::SliceRows(x, start)))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        if start + len > n {
            return Err(Error::OutOfRange {
                what: "slice_cols",
                index: start + len,
                len: n,
            });
        }
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&xv[r * n + start..r * n + start + len]);
        }
        Ok(self.push(Tensor::matrix(m, len, data)?, Op::SliceCols(x, start)))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            left: self.shape(a),
            right: self.shape(b),
        }
    }

    /// Reverse-mode gradient of a scalar node with respect to every
    /// parameter, in canonical flat order. Parameters the loss does not
    /// reach get exact zeros.
    pub fn backward(&self, loss: Var) -> Result<GradVector> {
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let offsets = self.params.offsets();
        let mut flat = GradVector::zeros(self.params.total_len());
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(idx) => {
                    let off = offsets[*idx];
                    for (dst, src) in flat.0[off..off + g.len()].iter_mut().zip(&g) {
                        *dst += src;
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.dims(*a);
                    let n = self.dims(*b).1;
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    self.acc(&mut grads, *a, |ga| gemm(m, n, k, &g, false, bv, true, ga));
                    self.acc(&mut grads, *b, |gb| gemm(k, m, n, av, true, &g, false, gb));
                }
                Op::MatMulT(a, b) => {
                    let (m, k) = self.dims(*a);
                    let n = self.dims(*b).0;
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    self.acc(&mut grads, *a, |ga| gemm(m, n, k, &g, false, bv, false, ga));
                    self.acc(&mut grads, *b, |gb| gemm(n, m, k, &g, true, av, false, gb));
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, |ga| add_into(ga, &g));
                    self.acc(&mut grads, *b, |gb| add_into(gb, &g));
                }
                Op::AddBias(a, b) => {
                    let n = self.dims(*a).1;
                    self.acc(&mut grads, *a, |ga| add_into(ga, &g));
                    self.acc(&mut grads, *b, |gb| {
                        for row in g.chunks(n.max(1)) {
                            add_into(gb, row);
                        }
                    });
                }
                Op::Scale(a, c) => {
                    self.acc(&mut grads, *a, |ga| {
                        for (d, s) in ga.iter_mut().zip(&g) {
                            *d += c * s;
                        }
                    });
                }
                Op::MulConst(a, c) => {
                    self.acc(&mut grads, *a, |ga| {
                        for ((d, s), k) in ga.iter_mut().zip(&g).zip(c) {
                            *d += k * s;
                        }
                    });
                }
                Op::Gather(table, ids) => {
                    let d = self.dims(*table).1;
                    self.acc(&mut grads, *table, |gt| {
                        for (r, &id) in ids.iter().enumerate() {
                            add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                        }
                    });
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let (m, n) = self.dims(*x);
                    let gv = self.value(*gain).data();
                    self.acc(&mut grads, *gain, |gg| {
                        for r in 0..m {
                            for c in 0..n {
                                gg[c] += g[r * n + c] * xhat[r * n + c];
                            }
                        }
                    });
                    self.acc(&mut grads, *bias, |gb| {
                        for row in g.chunks(n) {
                            add_into(gb, row);
                        }
                    });
                    self.acc(&mut grads, *x, |gx| {
                        let nf = n as f64;
                        for r in 0..m {
                            let mut sum_d = 0.0;
                            let mut sum_dx = 0.0;
                            for c in 0..n {
                                let dh = g[r * n + c] * gv[c];
                                sum_d += dh;
                                sum_dx += dh * xhat[r * n + c];
                            }
                            for c in 0..n {
                                let dh = g[r * n + c] * gv[c];
                                gx[r * n + c] += inv_std[r] / nf
                                    * (nf * dh - sum_d - xhat[r * n + c] * sum_dx);
                            }
                        }
                    });
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x).data();
                    self.acc(&mut grads, *x, |gx| {
                        for ((d, s), &v) in gx.iter_mut().zip(&g).zip(xv) {
                            let inner = GELU_C * (v + 0.044715 * v * v * v);
                            let th = inner.tanh();
                            let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                            let dy = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * dinner;
                            *d += s * dy;
                        }
                    });
                }
                Op::MaskedSoftmax(x) => {
                    let (m, n) = self.dims(*x);
                    let p = node.value.data();
                    self.acc(&mut grads, *x, |gx| {
                        for r in 0..m {
                            let pr = &p[r * n..(r + 1) * n];
                            let gr = &g[r * n..(r + 1) * n];
                            let dotp: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for c in 0..n {
                                gx[r * n + c] += pr[c] * (gr[c] - dotp);
                            }
                        }
                    });
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    eps,
                    probs,
                } => {
                    let v = self.dims(*logits).1;
                    let up = g[0];
                    let off = eps / v as f64;
                    self.acc(&mut grads, *logits, |gl| {
                        for (r, &t) in targets.iter().enumerate() {
                            for c in 0..v {
                                let q = if c == t { 1.0 - eps + off } else { off };
                                gl[r * v + c] += up * (probs[r * v + c] - q);
                            }
                        }
                    });
                }
                Op::Sum(x) => {
                    let up = g[0];
                    self.acc(&mut grads, *x, |gx| gx.iter_mut().for_each(|d| *d += up));
                }
                Op::MeanRows(x) => {
                    let (m, n) = self.dims(*x);
                    let inv = 1.0 / m as f64;
                    self.acc(&mut grads, *x, |gx| {
                        for r in 0..m {
                            for c in 0..n {
                                gx[r * n + c] += g[c] * inv;
                            }
                        }
                    });
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let len = self.value(p).numel();
                        self.acc(&mut grads, p, |gp| add_into(gp, &g[at..at + len]));
                        at += len;
                    }
                }
                Op::ConcatCols(parts) => {
                    let (m, total) = self.dims(Var(i));
                    let mut col = 0;
                    for &p in parts {
                        let w = self.dims(p).1;
                        self.acc(&mut grads, p, |gp| {
                            for r in 0..m {
                                add_into(
                                    &mut gp[r * w..(r + 1) * w],
                                    &g[r * total + col..r * total + col + w],
                                );
                            }
                        });
                        col += w;
                    }
                }
                Op::SliceRows(x, start) => {
                    let n = self.dims(*x).1;
                    let s = *start;
                    self.acc(&mut grads, *x, |gx| {
                        add_into(&mut gx[s * n..s * n + g.len()], &g);
                    });
                }
                Op::SliceCols(x, start) => {
                    let (m, n) = self.dims(*x);
                    let w = node.value.cols();
                    let s = *start;
                    self.acc(&mut grads, *x, |gx| {
                        for r in 0..m {
                            add_into(&mut gx[r * n + s..r * n + s + w], &g[r * w..(r + 1) * w]);
                        }
                    });
                }
            }
        }
        Ok(flat)
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        let slot = &mut grads[v.0];
        let buf = slot.get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
        f(buf);
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `c += op(a) · op(b)` where `op(a)` is `[m, k]` and `op(b)` is `[k, n]`.
///
/// With `a_t` set, `a` is stored as `[k, m]`; with `b_t` set, `b` is stored
/// as `[n, k]`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64]) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths match the dimensions and strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
