//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Values
//! live on the tape; a [`Var`] is a copyable handle into it. Calling
//! [`Tape::backward`] on a scalar propagates gradients to every parameter that
//! was loaded with [`Tape::param`] and returns them by name.
//!
//! Tensors are treated as row-major matrices `[rows, cols]` where `cols` is the
//! last dimension and `rows` the product of the leading ones. Every primitive
//! checks its output for NaN/Inf.
//!
//! One tape serves one forward/backward pass. Tapes are independent, so
//! several can run on different threads against a shared read-only
//! [`ParameterStore`].

mod check;
mod params;

pub use check::{check_gradients, finite_diff_check, FdOptions, FdReport, Offender};
pub use params::{AdamConfig, Gradients, Parameter, ParameterStore};

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("row {0} has no valid action (fully masked)")]
    NoValidAction(usize),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("duplicate parameter {0:?}")]
    DuplicateParameter(String),
    #[error("backward requires a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("invalid argument to {op}: {message}")]
    Invalid { op: &'static str, message: String },
}

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    AddBias { x: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Concat { parts: Vec<(Var, usize)> },
    GatherRows { a: Var, idx: Vec<usize> },
    GroupSum { a: Var, group: usize },
    HeadDot { a: Var, b: Var, heads: usize },
    HeadScale { v: Var, w: Var, heads: usize },
    GroupSoftmax { a: Var, group: usize },
    SoftmaxMasked { a: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    LogSoftmaxPick { logits: Var, probs: Vec<f64>, actions: Vec<usize> },
    WeightedSum { a: Var, weights: Vec<f64> },
    Sum(Var),
    Transpose { a: Var, rows: usize, cols: usize },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    param_lookup: HashMap<String, Var>,
}

fn cols_of(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

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

    /// Drops every recorded node and parameter binding.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.param_lookup.clear();
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, name: &'static str) -> Result<Var> {
        debug_assert_eq!(numel(&shape), value.len());
        if value.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite(name));
        }
        let needs_grad = match &op {
            Op::Leaf => false,
            _ => self.inputs_of(&op).iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { shape, value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs_of(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::AddBias { x, b } => vec![*x, *b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Relu(a) | Op::Tanh(a) | Op::Sum(a) | Op::Reshape(a) => vec![*a],
            Op::Concat { parts } => parts.iter().map(|p| p.0).collect(),
            Op::GatherRows { a, .. }
            | Op::GroupSum { a, .. }
            | Op::GroupSoftmax { a, .. }
            | Op::SoftmaxMasked { a }
            | Op::WeightedSum { a, .. }
            | Op::Transpose { a, .. } => vec![*a],
            Op::HeadDot { a, b, .. } => vec![*a, *b],
            Op::HeadScale { v, w, .. } => vec![*v, *w],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::LogSoftmaxPick { logits, .. } => vec![*logits],
        }
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn rows_cols(&self, v: Var) -> (usize, usize) {
        let shape = self.shape(v);
        let c = cols_of(shape);
        (if c == 0 { 0 } else { numel(shape) / c }, c)
    }

    /// A constant (no gradient flows into it).
    pub fn constant(&mut self, shape: &[usize], value: Vec<f64>) -> Result<Var> {
        if numel(shape) != value.len() {
            return Err(AutodiffError::Shape { op: "constant", left: shape.to_vec(), right: vec![value.len()] });
        }
        self.push(shape.to_vec(), value, Op::Leaf, "constant")
    }

    /// Loads a named parameter from `store`. Loading the same name twice on
    /// one tape returns the same handle, so tied weights share gradients.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(v) = self.param_lookup.get(name) {
            return Ok(*v);
        }
        let p = store.get(name).ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))?;
        let id = self.push(p.shape.clone(), p.value.clone(), Op::Leaf, "param")?;
        self.nodes[id.0].needs_grad = true;
        self.params.push((name.to_string(), id));
        self.param_lookup.insert(name.to_string(), id);
        Ok(id)
    }

    /// `a[m,k] · b[k,n]`; `a` may have extra leading dimensions.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.rows_cols(a);
        let bshape = self.shape(b).to_vec();
        if bshape.len() != 2 || bshape[0] != k {
            return Err(AutodiffError::Shape { op: "matmul", left: self.shape(a).to_vec(), right: bshape });
        }
        let n = bshape[1];
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, w) in row.iter_mut().zip(brow) {
                    *o += x * w;
                }
            }
        }
        let mut shape = self.shape(a).to_vec();
        *shape.last_mut().unwrap() = n;
        self.push(shape, out, Op::MatMul { a, b, m, k, n }, "matmul")
    }

    /// Adds `b[cols]` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, c) = self.rows_cols(x);
        if self.shape(b) != [c] {
            return Err(AutodiffError::Shape { op: "add_bias", left: self.shape(x).to_vec(), right: self.shape(b).to_vec() });
        }
        let bv = &self.nodes[b.0].value;
        let out: Vec<f64> = self.nodes[x.0].value.iter().enumerate().map(|(i, v)| v + bv[i % c]).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::AddBias { x, b }, "add_bias")
    }

    /// Affine map over the last axis: `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::Shape { op, left: self.shape(a).to_vec(), right: self.shape(b).to_vec() });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let out = self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(x, y)| f(*x, *y)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.nodes[a.0].value.iter().map(|x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Scale(a, factor), "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.nodes[a.0].value.iter().map(|x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Relu(a), "relu")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Tanh(a), "tanh")
    }

    /// Concatenation along the last axis; all parts must have the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(AutodiffError::Invalid { op: "concat", message: "no inputs".into() })?;
        let (rows, _) = self.rows_cols(first);
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.rows_cols(p);
            if r != rows {
                return Err(AutodiffError::Shape { op: "concat", left: self.shape(first).to_vec(), right: self.shape(p).to_vec() });
            }
            dims.push((p, c));
        }
        let total: usize = dims.iter().map(|d| d.1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &(p, c) in &dims {
                out.extend_from_slice(&self.nodes[p.0].value[r * c..(r + 1) * c]);
            }
        }
        let mut shape = self.shape(first).to_vec();
        *shape.last_mut().unwrap() = total;
        self.push(shape, out, Op::Concat { parts: dims }, "concat")
    }

    /// Selects rows of `a` (viewed as `[rows, cols]`) in the order of `idx`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (rows, c) = self.rows_cols(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::Invalid { op: "gather_rows", message: format!("row {bad} out of {rows}") });
        }
        let av = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&av[i * c..(i + 1) * c]);
        }
        self.push(vec![idx.len(), c], out, Op::GatherRows { a, idx: idx.to_vec() }, "gather_rows")
    }

    /// Sums consecutive blocks of `group` rows: `[g*group, c] -> [g, c]`.
    pub fn group_sum(&mut self, a: Var, group: usize) -> Result<Var> {
        let (rows, c) = self.rows_cols(a);
        if group == 0 || rows % group != 0 {
            return Err(AutodiffError::Invalid { op: "group_sum", message: format!("{rows} rows not divisible by {group}") });
        }
        let g = rows / group;
        let av = &self.nodes[a.0].value;
        let mut out = vec![0.0; g * c];
        for r in 0..rows {
            let dst = &mut out[(r / group) * c..(r / group + 1) * c];
            for (o, x) in dst.iter_mut().zip(&av[r * c..(r + 1) * c]) {
                *o += x;
            }
        }
        self.push(vec![g, c], out, Op::GroupSum { a, group }, "group_sum")
    }

    /// Mean over all rows: `[rows, c] -> [1, c]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (rows, _) = self.rows_cols(a);
        let s = self.group_sum(a, rows)?;
        self.scale(s, 1.0 / rows as f64)
    }

    /// Per-head dot products: `a, b: [r, heads*w] -> [r, heads]`.
    pub fn head_dot(&mut self, a: Var, b: Var, heads: usize) -> Result<Var> {
        self.same_shape("head_dot", a, b)?;
        let (rows, c) = self.rows_cols(a);
        if heads == 0 || c % heads != 0 {
            return Err(AutodiffError::Invalid { op: "head_dot", message: format!("{c} columns, {heads} heads") });
        }
        let w = c / heads;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut out = vec![0.0; rows * heads];
        for r in 0..rows {
            for h in 0..heads {
                let s = r * c + h * w;
                out[r * heads + h] = av[s..s + w].iter().zip(&bv[s..s + w]).map(|(x, y)| x * y).sum();
            }
        }
        self.push(vec![rows, heads], out, Op::HeadDot { a, b, heads }, "head_dot")
    }

    /// Scales each head slice of `v[r, heads*w]` by `w[r, heads]`.
    pub fn head_scale(&mut self, v: Var, w: Var, heads: usize) -> Result<Var> {
        let (rows, c) = self.rows_cols(v);
        if self.shape(w) != [rows, heads] || heads == 0 || c % heads != 0 {
            return Err(AutodiffError::Shape { op: "head_scale", left: self.shape(v).to_vec(), right: self.shape(w).to_vec() });
        }
        let width = c / heads;
        let (vv, wv) = (&self.nodes[v.0].value, &self.nodes[w.0].value);
        let out = vv.iter().enumerate().map(|(i, x)| x * wv[(i / c) * heads + (i % c) / width]).collect();
        let shape = self.shape(v).to_vec();
        self.push(shape, out, Op::HeadScale { v, w, heads }, "head_scale")
    }

    /// Softmax over each block of `group` consecutive rows, independently per column.
    pub fn group_softmax(&mut self, a: Var, group: usize) -> Result<Var> {
        let (rows, c) = self.rows_cols(a);
        if group == 0 || rows % group != 0 {
            return Err(AutodiffError::Invalid { op: "group_softmax", message: format!("{rows} rows not divisible by {group}") });
        }
        let av = &self.nodes[a.0].value;
        let mut out = vec![0.0; rows * c];
        for g in 0..rows / group {
            for col in 0..c {
                let at = |k: usize| (g * group + k) * c + col;
                let max = (0..group).map(|k| av[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..group {
                    let e = (av[at(k)] - max).exp();
                    out[at(k)] = e;
                    z += e;
                }
                for k in 0..group {
                    out[at(k)] /= z;
                }
            }
        }
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::GroupSoftmax { a, group }, "group_softmax")
    }

    /// Row-wise softmax over the last axis restricted to `mask` (true = allowed).
    /// Masked entries come out exactly 0.
    pub fn softmax_masked(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let (rows, c) = self.rows_cols(a);
        if mask.len() != rows * c {
            return Err(AutodiffError::Shape { op: "softmax_masked", left: self.shape(a).to_vec(), right: vec![mask.len()] });
        }
        let out = masked_softmax_rows(&self.nodes[a.0].value, mask, c)?;
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::SoftmaxMasked { a }, "softmax_masked")
    }

    /// Row-wise layer normalization over the last axis followed by `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, c) = self.rows_cols(x);
        if c == 0 || self.shape(gain) != [c] || self.shape(bias) != [c] {
            return Err(AutodiffError::Shape { op: "layer_norm", left: self.shape(x).to_vec(), right: self.shape(gain).to_vec() });
        }
        let xv = &self.nodes[x.0].value;
        let (gv, bv) = (&self.nodes[gain.0].value, &self.nodes[bias.0].value);
        let mut xhat = vec![0.0; rows * c];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * c];
        for r in 0..rows {
            let row = &xv[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for k in 0..c {
                let h = (row[k] - mean) * is;
                xhat[r * c + k] = h;
                out[r * c + k] = h * gv[k] + bv[k];
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, "layer_norm")
    }

    /// Log-probability of `actions[r]` under the masked softmax of row `r`:
    /// `[rows, c] -> [rows]`.
    pub fn log_softmax_pick(&mut self, logits: Var, mask: &[bool], actions: &[usize]) -> Result<Var> {
        let (rows, c) = self.rows_cols(logits);
        if mask.len() != rows * c || actions.len() != rows {
            return Err(AutodiffError::Shape { op: "log_softmax_pick", left: self.shape(logits).to_vec(), right: vec![mask.len(), actions.len()] });
        }
        let lv = &self.nodes[logits.0].value;
        let probs = masked_softmax_rows(lv, mask, c)?;
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let a = actions[r];
            if a >= c || !mask[r * c + a] {
                return Err(AutodiffError::Invalid { op: "log_softmax_pick", message: format!("action {a} is masked in row {r}") });
            }
            let row = &lv[r * c..(r + 1) * c];
            let max = (0..c).filter(|&k| mask[r * c + k]).map(|k| row[k]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..c).filter(|&k| mask[r * c + k]).map(|k| (row[k] - max).exp()).sum();
            out[r] = row[a] - max - z.ln();
        }
        self.push(vec![rows], out, Op::LogSoftmaxPick { logits, probs, actions: actions.to_vec() }, "log_softmax_pick")
    }

    /// `Σ weights[i] · a[i]` as a scalar.
    pub fn weighted_sum(&mut self, a: Var, weights: &[f64]) -> Result<Var> {
        let av = self.value(a);
        if av.len() != weights.len() {
            return Err(AutodiffError::Shape { op: "weighted_sum", left: self.shape(a).to_vec(), right: vec![weights.len()] });
        }
        let s = av.iter().zip(weights).map(|(x, w)| x * w).sum();
        self.push(vec![1], vec![s], Op::WeightedSum { a, weights: weights.to_vec() }, "weighted_sum")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().sum();
        self.push(vec![1], vec![s], Op::Sum(a), "sum")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.rows_cols(a);
        let av = &self.nodes[a.0].value;
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = av[r * cols + c];
            }
        }
        self.push(vec![cols, rows], out, Op::Transpose { a, rows, cols }, "transpose")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != numel(self.shape(a)) {
            return Err(AutodiffError::Shape { op: "reshape", left: self.shape(a).to_vec(), right: shape.to_vec() });
        }
        let value = self.value(a).to_vec();
        self.push(shape.to_vec(), value, Op::Reshape(a), "reshape")
    }

    /// Reverse pass from a scalar `loss`. Returns gradients for every parameter
    /// loaded on this tape (zeros where no gradient flowed).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if numel(self.shape(loss)) != 1 {
            return Err(AutodiffError::NotScalar(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        let mut out = Gradients::default();
        for (name, v) in &self.params {
            let g = grads.get(v.0).and_then(|g| g.clone()).unwrap_or_else(|| vec![0.0; self.value(*v).len()]);
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |v: &Var| nodes[v.0].needs_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if wants(a) {
                    acc(*a, &mut |ga| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &bv[p * n..(p + 1) * n];
                                ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                }
                if wants(b) {
                    acc(*b, &mut |gb| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let x = av[i * k + p];
                                if x == 0.0 {
                                    continue;
                                }
                                for (o, y) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *o += x * y;
                                }
                            }
                        }
                    });
                }
            }
            Op::AddBias { x, b } => {
                let c = nodes[b.0].value.len();
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, v)| *o += v));
                acc(*b, &mut |gb| {
                    for (i, v) in g.iter().enumerate() {
                        gb[i % c] += v;
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, v)| *o += v));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, v)| *o += v));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, v)| *o += v));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, v)| *o -= v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(a, f) => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, v)| *o += v * f)),
            Op::Relu(a) => {
                let av = &nodes[a.0].value;
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        if av[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                });
            }
            Op::Tanh(a) => {
                let y = &node.value;
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Concat { parts } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let rows = g.len() / total.max(1);
                let mut offset = 0;
                for &(p, c) in parts {
                    acc(p, &mut |gp| {
                        for r in 0..rows {
                            for k in 0..c {
                                gp[r * c + k] += g[r * total + offset + k];
                            }
                        }
                    });
                    offset += c;
                }
            }
            Op::GatherRows { a, idx } => {
                let c = cols_of(&node.shape);
                acc(*a, &mut |ga| {
                    for (r, &src) in idx.iter().enumerate() {
                        for k in 0..c {
                            ga[src * c + k] += g[r * c + k];
                        }
                    }
                });
            }
            Op::GroupSum { a, group } => {
                let c = cols_of(&node.shape);
                acc(*a, &mut |ga| {
                    for (i, o) in ga.iter_mut().enumerate() {
                        let (r, k) = (i / c, i % c);
                        *o += g[(r / group) * c + k];
                    }
                });
            }
            Op::HeadDot { a, b, heads } => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let c = cols_of(&nodes[a.0].shape);
                let w = c / heads;
                let coef = |i: usize| g[(i / c) * heads + (i % c) / w];
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += coef(i) * bv[i];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..gb.len() {
                        gb[i] += coef(i) * av[i];
                    }
                });
            }
            Op::HeadScale { v, w, heads } => {
                let (vv, wv) = (&nodes[v.0].value, &nodes[w.0].value);
                let c = cols_of(&nodes[v.0].shape);
                let width = c / heads;
                let at = |i: usize| (i / c) * heads + (i % c) / width;
                acc(*v, &mut |gv| {
                    for i in 0..gv.len() {
                        gv[i] += g[i] * wv[at(i)];
                    }
                });
                acc(*w, &mut |gw| {
                    for i in 0..vv.len() {
                        gw[at(i)] += g[i] * vv[i];
                    }
                });
            }
            Op::GroupSoftmax { a, group } => {
                let y = &node.value;
                let c = cols_of(&node.shape);
                let rows = y.len() / c;
                acc(*a, &mut |ga| {
                    for gi in 0..rows / group {
                        for col in 0..c {
                            let at = |k: usize| (gi * group + k) * c + col;
                            let dot: f64 = (0..*group).map(|k| g[at(k)] * y[at(k)]).sum();
                            for k in 0..*group {
                                ga[at(k)] += y[at(k)] * (g[at(k)] - dot);
                            }
                        }
                    }
                });
            }
            Op::SoftmaxMasked { a } => {
                let y = &node.value;
                let c = cols_of(&node.shape);
                acc(*a, &mut |ga| softmax_backward_rows(y, g, c, ga));
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let c = cols_of(&node.shape);
                let rows = xhat.len() / c;
                let gv = &nodes[gain.0].value;
                acc(*x, &mut |gx| {
                    for r in 0..rows {
                        let s = r * c;
                        let dh: Vec<f64> = (0..c).map(|k| g[s + k] * gv[k]).collect();
                        let mean_dh = dh.iter().sum::<f64>() / c as f64;
                        let mean_dh_h = (0..c).map(|k| dh[k] * xhat[s + k]).sum::<f64>() / c as f64;
                        for k in 0..c {
                            gx[s + k] += inv_std[r] * (dh[k] - mean_dh - xhat[s + k] * mean_dh_h);
                        }
                    }
                });
                acc(*gain, &mut |gg| {
                    for i in 0..g.len() {
                        gg[i % c] += g[i] * xhat[i];
                    }
                });
                acc(*bias, &mut |gb| {
                    for i in 0..g.len() {
                        gb[i % c] += g[i];
                    }
                });
            }
            Op::LogSoftmaxPick { logits, probs, actions } => {
                let c = cols_of(&nodes[logits.0].shape);
                acc(*logits, &mut |gl| {
                    for (r, &a) in actions.iter().enumerate() {
                        for k in 0..c {
                            let onehot = if k == a { 1.0 } else { 0.0 };
                            gl[r * c + k] += g[r] * (onehot - probs[r * c + k]);
                        }
                    }
                });
            }
            Op::WeightedSum { a, weights } => {
                acc(*a, &mut |ga| ga.iter_mut().zip(weights).for_each(|(o, w)| *o += g[0] * w));
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0])),
            Op::Transpose { a, rows, cols } => {
                acc(*a, &mut |ga| {
                    for r in 0..*rows {
                        for c in 0..*cols {
                            ga[r * cols + c] += g[c * rows + r];
                        }
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, v)| *o += v)),
        }
    }
}

/// Masked, max-stabilized softmax over rows of width `c`.
pub fn masked_softmax_rows(values: &[f64], mask: &[bool], c: usize) -> Result<Vec<f64>> {
    let rows = if c == 0 { 0 } else { values.len() / c };
    let mut out = vec![0.0; values.len()];
    for r in 0..rows {
        let s = r * c;
        let max = (0..c).filter(|&k| mask[s + k]).map(|k| values[s + k]).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(AutodiffError::NoValidAction(r));
        }
        let mut z = 0.0;
        for k in 0..c {
            if mask[s + k] {
                let e = (values[s + k] - max).exp();
                out[s + k] = e;
                z += e;
            }
        }
        for k in 0..c {
            out[s + k] /= z;
        }
    }
    Ok(out)
}

fn softmax_backward_rows(y: &[f64], g: &[f64], c: usize, ga: &mut [f64]) {
    for r in 0..y.len() / c {
        let s = r * c;
        let dot: f64 = (0..c).map(|k| g[s + k] * y[s + k]).sum();
        for k in 0..c {
            ga[s + k] += y[s + k] * (g[s + k] - dot);
        }
    }
}
