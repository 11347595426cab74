//! Dynamic reverse-mode tape.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each recorded primitive
//! appends one node whose inputs are earlier nodes, so node order is a
//! topological order and backward is a single reverse sweep.

use std::ops::Range;

use super::kernels;
use super::tensor::{ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf { param: Option<ParamId> },
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    Sum(Var),
    Mean(Var),
    Gelu(Var),
    Reshape(Var),
    SelectRows { x: Var, rows: Vec<usize> },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Embedding { table: Var, ids: Vec<usize> },
    Attention { q: Var, k: Var, v: Var, heads: usize, segments: Vec<Range<usize>>, probs: Vec<Vec<f64>> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    LogSoftmaxGather { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation graph plus accumulated leaf gradients.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Input leaf; gradients are tracked when `t.requires_grad()` is set.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf { param: None }, rg)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        self.push(t, Op::Leaf { param: None }, false)
    }

    /// Leaf bound to a parameter; [`Tape::flush_into`] routes its gradient back.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let mut t = params.get(id).clone();
        t.zero_grad();
        let rg = t.requires_grad();
        self.push(t, Op::Leaf { param: Some(id) }, rg)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.node(v).value.values()
    }

    pub fn tensor(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[v.0].as_deref()
    }

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [m, n] => Ok((*m, *n)),
            s => Err(Error::Dimension(format!("{what}: expected a matrix, got shape {s:?}"))),
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul lhs")?;
        let (k2, n) = self.dims2(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::Dimension(format!("matmul: {m}x{k} · {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| f(*x, *y)).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(self.shape(a).to_vec(), out)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "minimum", f64::min, Op::Minimum(a, b))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "add_row")?;
        if self.value(bias).len() != n {
            return Err(Error::Dimension(format!("add_row: bias of length {} for {m}x{n}", self.value(bias).len())));
        }
        let b = self.value(bias);
        let out: Vec<f64> = self.value(a).chunks(n).flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y)).collect();
        let rg = self.rg(&[a, bias]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::AddRow(a, bias), rg))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|x| f(*x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(Tensor::new(shape, out).expect("same shape"), op, rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    /// Clamp into `[lo, hi]`; gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, kernels::gelu, Op::Gelu(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::Dimension("mean of an empty tensor".into()));
        }
        let s = self.value(a).iter().sum::<f64>() / n as f64;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), self.value(a).to_vec())?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2(x, "select_rows")?;
        if let Some(&r) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::Index(format!("row {r} out of range for {m} rows")));
        }
        let src = self.value(x);
        let out: Vec<f64> = rows.iter().flat_map(|&r| src[r * n..(r + 1) * n].iter().copied()).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![rows.len(), n], out)?, Op::SelectRows { x, rows: rows.to_vec() }, rg))
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "layer_norm")?;
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(Error::Dimension(format!("layer_norm: gain/bias must have length {n}")));
        }
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        let (g, b) = (self.value(gain), self.value(bias));
        for (i, row) in self.value(x).chunks(n).enumerate() {
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mu) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg))
    }

    /// Gathers rows of `table` (`V×d`) by token id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, d) = self.dims2(table, "embedding")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Index(format!("token id {bad} out of range for table of {vocab} rows")));
        }
        let src = self.value(table);
        let out: Vec<f64> = ids.iter().flat_map(|&i| src[i * d..(i + 1) * d].iter().copied()).collect();
        let rg = self.rg(&[table]);
        Ok(self.push(Tensor::new(vec![ids.len(), d], out)?, Op::Embedding { table, ids: ids.to_vec() }, rg))
    }

    /// Multi-head causal self-attention over packed sequences.
    ///
    /// `q`, `k`, `v` are `N×d`; `segments` partitions `0..N` into independent
    /// sequences. Position `t` attends to positions `≤ t` of its own segment.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize, segments: &[Range<usize>]) -> Result<Var> {
        let (n, d) = self.dims2(q, "attention q")?;
        self.same_shape(q, k, "attention q/k")?;
        self.same_shape(q, v, "attention q/v")?;
        if heads == 0 || d % heads != 0 {
            return Err(Error::Dimension(format!("attention: d={d} not divisible by {heads} heads")));
        }
        let mut cursor = 0;
        for s in segments {
            if s.start != cursor || s.end <= s.start {
                return Err(Error::Dimension(format!("attention: segments must tile 0..{n} contiguously")));
            }
            cursor = s.end;
        }
        if cursor != n {
            return Err(Error::Dimension(format!("attention: segments cover {cursor} of {n} rows")));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut out = vec![0.0; n * d];
        let mut probs = Vec::with_capacity(segments.len() * heads);
        for seg in segments {
            let len = seg.len();
            for h in 0..heads {
                let off = h * dh;
                let mut p = vec![0.0; len * len];
                for t in 0..len {
                    let qi = (seg.start + t) * d + off;
                    let row = &mut p[t * len..t * len + t + 1];
                    for (j, s) in row.iter_mut().enumerate() {
                        let kj = (seg.start + j) * d + off;
                        *s = kernels::dot(&qv[qi..qi + dh], &kv[kj..kj + dh]) * scale;
                    }
                    kernels::softmax_row(row);
                    let oi = (seg.start + t) * d + off;
                    for (j, &w) in row.iter().enumerate() {
                        let vj = (seg.start + j) * d + off;
                        for c in 0..dh {
                            out[oi + c] += w * vv[vj + c];
                        }
                    }
                }
                probs.push(p);
            }
        }
        let rg = self.rg(&[q, k, v]);
        let op = Op::Attention { q, k, v, heads, segments: segments.to_vec(), probs };
        Ok(self.push(Tensor::new(vec![n, d], out)?, op, rg))
    }

    fn check_targets(&self, logits: Var, targets: &[usize], what: &str) -> Result<(usize, usize)> {
        let (t, vocab) = self.dims2(logits, what)?;
        if targets.len() != t {
            return Err(Error::Dimension(format!("{what}: {} targets for {t} rows", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&x| x >= vocab) {
            return Err(Error::Index(format!("{what}: target {bad} out of range for vocabulary {vocab}")));
        }
        Ok((t, vocab))
    }

    /// Mean over rows of `−log softmax(logits)[row, target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (t, vocab) = self.check_targets(logits, targets, "softmax_cross_entropy")?;
        if t == 0 {
            return Err(Error::Dimension("softmax_cross_entropy over zero rows".into()));
        }
        let mut probs = self.value(logits).to_vec();
        let mut loss = 0.0;
        for (i, row) in probs.chunks_mut(vocab).enumerate() {
            let lse = kernels::log_sum_exp(row);
            loss += lse - row[targets[i]];
            kernels::softmax_row(row);
        }
        let rg = self.rg(&[logits]);
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), probs };
        Ok(self.push(Tensor::scalar(loss / t as f64), op, rg))
    }

    /// Per-row `log softmax(logits)[row, target]` as a length-`T` vector.
    pub fn log_softmax_gather(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (t, vocab) = self.check_targets(logits, targets, "log_softmax_gather")?;
        let mut probs = self.value(logits).to_vec();
        let mut out = Vec::with_capacity(t);
        for (i, row) in probs.chunks_mut(vocab).enumerate() {
            let lse = kernels::log_sum_exp(row);
            out.push(row[targets[i]] - lse);
            kernels::softmax_row(row);
        }
        let rg = self.rg(&[logits]);
        let op = Op::LogSoftmaxGather { logits, targets: targets.to_vec(), probs };
        Ok(self.push(Tensor::new(vec![t], out)?, op, rg))
    }

    /// Reverse sweep from a scalar `loss`, accumulating into leaf gradients.
    ///
    /// Calling it again (on the same or another scalar) adds to the stored
    /// leaf gradients rather than replacing them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape {:?}", self.shape(loss))));
        }
        if !self.node(loss).requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf { .. } = node.op {
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, x)| *a += x),
                    None => self.leaf_grads[i] = Some(g),
                }
                continue;
            }
            propagate(&self.nodes, i, &g, &mut grads);
        }
        Ok(())
    }

    /// Moves gradients of parameter leaves into `params`, clearing them here.
    pub fn flush_into(&mut self, params: &mut ParamSet) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(id) } = node.op {
                if let Some(g) = self.leaf_grads[i].take() {
                    params.get_mut(id).accumulate_grad(&g)?;
                }
            }
        }
        Ok(())
    }
}

fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
}

fn propagate(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |v: Var| nodes[v.0].value.values();
    match &nodes[i].op {
        Op::Leaf { .. } => {}
        Op::MatMul(a, b) => {
            let sa = nodes[a.0].value.shape();
            let sb = nodes[b.0].value.shape();
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            if let Some(da) = slot(nodes, grads, *a) {
                kernels::matmul_nt_acc(g, val(*b), da, m, k, n);
            }
            if let Some(db) = slot(nodes, grads, *b) {
                kernels::matmul_tn_acc(val(*a), g, db, m, k, n);
            }
        }
        Op::Add(a, b) => {
            for v in [a, b] {
                if let Some(d) = slot(nodes, grads, *v) {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(d) = slot(nodes, grads, *a) {
                d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
            if let Some(d) = slot(nodes, grads, *b) {
                d.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
            }
        }
        Op::Mul(a, b) => {
            if let Some(d) = slot(nodes, grads, *a) {
                for ((x, y), w) in d.iter_mut().zip(g).zip(val(*b)) {
                    *x += y * w;
                }
            }
            if let Some(d) = slot(nodes, grads, *b) {
                for ((x, y), w) in d.iter_mut().zip(g).zip(val(*a)) {
                    *x += y * w;
                }
            }
        }
        Op::Minimum(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            if let Some(d) = slot(nodes, grads, *a) {
                for j in 0..d.len() {
                    if va[j] <= vb[j] {
                        d[j] += g[j];
                    }
                }
            }
            if let Some(d) = slot(nodes, grads, *b) {
                for j in 0..d.len() {
                    if va[j] > vb[j] {
                        d[j] += g[j];
                    }
                }
            }
        }
        Op::AddRow(a, bias) => {
            if let Some(d) = slot(nodes, grads, *a) {
                d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
            if let Some(d) = slot(nodes, grads, *bias) {
                let n = d.len();
                for row in g.chunks(n) {
                    d.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                }
            }
        }
        Op::Scale(a, s) => {
            if let Some(d) = slot(nodes, grads, *a) {
                d.iter_mut().zip(g).for_each(|(x, y)| *x += s * y);
            }
        }
        Op::Exp(a) => {
            let out = nodes[i].value.values();
            if let Some(d) = slot(nodes, grads, *a) {
                for ((x, y), o) in d.iter_mut().zip(g).zip(out) {
                    *x += y * o;
                }
            }
        }
        Op::Square(a) => {
            let va = val(*a);
            if let Some(d) = slot(nodes, grads, *a) {
                for ((x, y), w) in d.iter_mut().zip(g).zip(va) {
                    *x += 2.0 * w * y;
                }
            }
        }
        Op::Clamp(a, lo, hi) => {
            let va = val(*a);
            if let Some(d) = slot(nodes, grads, *a) {
                for ((x, y), w) in d.iter_mut().zip(g).zip(va) {
                    if *w >= *lo && *w <= *hi {
                        *x += y;
                    }
                }
            }
        }
        Op::Gelu(a) => {
            let va = val(*a);
            if let Some(d) = slot(nodes, grads, *a) {
                for ((x, y), w) in d.iter_mut().zip(g).zip(va) {
                    *x += y * kernels::gelu_grad(*w);
                }
            }
        }
        Op::Sum(a) => {
            if let Some(d) = slot(nodes, grads, *a) {
                d.iter_mut().for_each(|x| *x += g[0]);
            }
        }
        Op::Mean(a) => {
            if let Some(d) = slot(nodes, grads, *a) {
                let s = g[0] / d.len() as f64;
                d.iter_mut().for_each(|x| *x += s);
            }
        }
        Op::Reshape(a) => {
            if let Some(d) = slot(nodes, grads, *a) {
                d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
        }
        Op::SelectRows { x, rows } => {
            let n = nodes[x.0].value.cols();
            if let Some(d) = slot(nodes, grads, *x) {
                for (k, &r) in rows.iter().enumerate() {
                    for c in 0..n {
                        d[r * n + c] += g[k * n + c];
                    }
                }
            }
        }
        Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
            let n = nodes[x.0].value.cols();
            let gv = val(*gain);
            if let Some(d) = slot(nodes, grads, *gain) {
                for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                    for j in 0..n {
                        d[j] += grow[j] * hrow[j];
                    }
                }
            }
            if let Some(d) = slot(nodes, grads, *bias) {
                for grow in g.chunks(n) {
                    d.iter_mut().zip(grow).for_each(|(a, b)| *a += b);
                }
            }
            if let Some(d) = slot(nodes, grads, *x) {
                let nf = n as f64;
                let mut dxhat = vec![0.0; n];
                for (r, (grow, hrow)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..n {
                        dxhat[j] = grow[j] * gv[j];
                        s1 += dxhat[j];
                        s2 += dxhat[j] * hrow[j];
                    }
                    let is = inv_std[r];
                    for j in 0..n {
                        d[r * n + j] += is / nf * (nf * dxhat[j] - s1 - hrow[j] * s2);
                    }
                }
            }
        }
        Op::Embedding { table, ids } => {
            let dim = nodes[table.0].value.cols();
            if let Some(d) = slot(nodes, grads, *table) {
                for (k, &id) in ids.iter().enumerate() {
                    for c in 0..dim {
                        d[id * dim + c] += g[k * dim + c];
                    }
                }
            }
        }
        Op::Attention { q, k, v, heads, segments, probs } => {
            attention_backward(nodes, grads, g, (*q, *k, *v), *heads, segments, probs);
        }
        Op::CrossEntropy { logits, targets, probs } => {
            let vocab = nodes[logits.0].value.cols();
            let t = targets.len() as f64;
            if let Some(d) = slot(nodes, grads, *logits) {
                let s = g[0] / t;
                for (r, (drow, prow)) in d.chunks_mut(vocab).zip(probs.chunks(vocab)).enumerate() {
                    for j in 0..vocab {
                        drow[j] += s * prow[j];
                    }
                    drow[targets[r]] -= s;
                }
            }
        }
        Op::LogSoftmaxGather { logits, targets, probs } => {
            let vocab = nodes[logits.0].value.cols();
            if let Some(d) = slot(nodes, grads, *logits) {
                for (r, (drow, prow)) in d.chunks_mut(vocab).zip(probs.chunks(vocab)).enumerate() {
                    let gr = g[r];
                    if gr == 0.0 {
                        continue;
                    }
                    for j in 0..vocab {
                        drow[j] -= gr * prow[j];
                    }
                    drow[targets[r]] += gr;
                }
            }
        }
    }
}

fn attention_backward(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    (q, k, v): (Var, Var, Var),
    heads: usize,
    segments: &[Range<usize>],
    probs: &[Vec<f64>],
) {
    let d = nodes[q.0].value.cols();
    let n = nodes[q.0].value.rows();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (qv, kv, vv) = (nodes[q.0].value.values(), nodes[k.0].value.values(), nodes[v.0].value.values());
    let mut dq = vec![0.0; n * d];
    let mut dk = vec![0.0; n * d];
    let mut dv = vec![0.0; n * d];
    let mut pi = 0;
    for seg in segments {
        let len = seg.len();
        for h in 0..heads {
            let off = h * dh;
            let p = &probs[pi];
            pi += 1;
            let mut ds = vec![0.0; len];
            for t in 0..len {
                let gi = (seg.start + t) * d + off;
                let go = &g[gi..gi + dh];
                let prow = &p[t * len..t * len + t + 1];
                // dP[t, j] = dO[t] · V[j]; dV[j] += P[t, j] dO[t]
                let mut dot_pd = 0.0;
                for (j, &w) in prow.iter().enumerate() {
                    let vj = (seg.start + j) * d + off;
                    let dp = kernels::dot(go, &vv[vj..vj + dh]);
                    ds[j] = dp;
                    dot_pd += w * dp;
                    for c in 0..dh {
                        dv[vj + c] += w * go[c];
                    }
                }
                let qi = (seg.start + t) * d + off;
                for (j, &w) in prow.iter().enumerate() {
                    let dsj = w * (ds[j] - dot_pd) * scale;
                    if dsj == 0.0 {
                        continue;
                    }
                    let kj = (seg.start + j) * d + off;
                    for c in 0..dh {
                        dq[qi + c] += dsj * kv[kj + c];
                        dk[kj + c] += dsj * qv[qi + c];
                    }
                }
            }
        }
    }
    for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
        if let Some(dst) = slot(nodes, grads, var) {
            dst.iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
        }
    }
}
