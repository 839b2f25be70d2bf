//! Tape-based reverse-mode differentiation over a fixed primitive set.
//!
//! A [`Tape`] records one forward pass. Every primitive evaluates eagerly and
//! appends a node; [`Tape::backward`] walks the nodes in reverse and fills the
//! gradient buffer of every node that depends on a leaf created with
//! `requires_grad = true`. Nodes that cannot reach such a leaf are skipped, so
//! a frozen prefix of a network costs nothing in the backward pass.

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// `[.., n] + [n]`, broadcasting the row vector over leading dimensions.
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    Reshape(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
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

    /// Records an input tensor. Gradients are only accumulated for leaves
    /// created with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        value.check_finite("leaf")?;
        Ok(self.push(value, Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Gradient of the last backward pass with respect to `var`.
    pub fn grad(&self, var: Var) -> Option<&[f64]> {
        self.nodes[var.0].value.grad()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.backward_done = false;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        value.check_finite(op_name)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.record("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// Elementwise sum of equal shapes, or a row-vector bias broadcast when
    /// `b` is rank 1 and matches the trailing dimension of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            let values = zip_map(self.value(a).values(), self.value(b).values(), |x, y| x + y);
            let out = Tensor::from_parts(sa.to_vec(), values);
            return self.record("add", out, Op::Add(a, b), &[a, b]);
        }
        if sb.len() == 1 && sa.last() == Some(&sb[0]) {
            let n = sb[0];
            let bias = self.value(b).values();
            let values: Vec<f64> = self
                .value(a)
                .values()
                .iter()
                .enumerate()
                .map(|(i, x)| x + bias[i % n])
                .collect();
            let out = Tensor::from_parts(sa.to_vec(), values);
            return self.record("add", out, Op::AddRow(a, b), &[a, b]);
        }
        Err(Error::shape("add", format!("{sa:?} + {sb:?}")))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape("mul", format!("{sa:?} * {sb:?}")));
        }
        let values = zip_map(self.value(a).values(), self.value(b).values(), |x, y| x * y);
        let out = Tensor::from_parts(sa.to_vec(), values);
        self.record("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::from_parts(t.shape().to_vec(), t.values().iter().map(|x| x * factor).collect());
        self.record("scale", out, Op::Scale(a, factor), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::from_parts(t.shape().to_vec(), t.values().iter().map(|&x| x.max(0.0)).collect());
        self.record("relu", out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::from_parts(t.shape().to_vec(), t.values().iter().map(|&x| sigmoid(x)).collect());
        self.record("sigmoid", out, Op::Sigmoid(a), &[a])
    }

    /// Sum of all entries, as a shape-`[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).values().iter().sum();
        self.record("sum", Tensor::scalar(total), Op::Sum(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshaped(shape)?;
        self.record("reshape", out, Op::Reshape(a), &[a])
    }

    /// Looks up rows of `table` ([vocab, dim]) for `ids`, grouping every
    /// `seq_len` consecutive ids into one flattened output row of width
    /// `seq_len * dim`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], seq_len: usize) -> Result<Var> {
        let (vocab, dim) = self.value(table).as_matrix("embedding")?;
        if seq_len == 0 || ids.is_empty() || ids.len() % seq_len != 0 {
            return Err(Error::shape(
                "embedding",
                format!("{} ids do not split into rows of {seq_len}", ids.len()),
            ));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::shape("embedding", format!("id {bad} outside table of {vocab} rows")));
        }
        let table_values = self.value(table).values();
        let mut values = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            values.extend_from_slice(&table_values[id * dim..(id + 1) * dim]);
        }
        let out = Tensor::from_parts(vec![ids.len() / seq_len, seq_len * dim], values);
        self.record(
            "embedding",
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Mean softmax cross-entropy of `logits` ([batch, classes]) against
    /// integer targets.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (batch, classes) = self.value(logits).as_matrix("softmax_cross_entropy")?;
        if targets.len() != batch {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{batch} rows but {} targets", targets.len()),
            ));
        }
        if let Some(bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("target {bad} outside {classes} classes"),
            ));
        }
        let x = self.value(logits).values();
        let mut probs = vec![0.0; batch * classes];
        let mut loss = 0.0;
        for (r, &target) in targets.iter().enumerate() {
            let row = &x[r * classes..(r + 1) * classes];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for c in 0..classes {
                probs[r * classes + c] = (row[c] - max).exp() / denom;
            }
            loss += denom.ln() + max - row[target];
        }
        let out = Tensor::scalar(loss / batch as f64);
        self.record(
            "softmax_cross_entropy",
            out,
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Propagates gradients from the scalar `loss` to every node that needs
    /// them. A tape supports exactly one backward pass per recorded forward.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::BackwardWithoutForward);
        }
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let loss_shape = self.value(loss).shape().to_vec();
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &upstream, &mut grads)?;
            if upstream.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite { op: "backward" });
            }
            self.nodes[idx].value.set_grad(upstream);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, up: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).as_matrix("matmul")?;
                let n = self.value(*b).shape()[1];
                if self.wants(*a) {
                    // dA = dC * B^T
                    let g = accumulator(grads, *a, m * k);
                    gemm(m, n, k, up, false, self.value(*b).values(), true, g, 1.0);
                }
                if self.wants(*b) {
                    // dB = A^T * dC
                    let g = accumulator(grads, *b, k * n);
                    gemm(k, m, n, self.value(*a).values(), true, up, false, g, 1.0);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        add_into(accumulator(grads, v, up.len()), up);
                    }
                }
            }
            Op::AddRow(a, b) => {
                if self.wants(*a) {
                    add_into(accumulator(grads, *a, up.len()), up);
                }
                if self.wants(*b) {
                    let n = self.value(*b).numel();
                    let g = accumulator(grads, *b, n);
                    for (i, u) in up.iter().enumerate() {
                        g[i % n] += u;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let other = self.value(*b).values();
                    let g = accumulator(grads, *a, up.len());
                    for i in 0..up.len() {
                        g[i] += up[i] * other[i];
                    }
                }
                if self.wants(*b) {
                    let other = self.value(*a).values();
                    let g = accumulator(grads, *b, up.len());
                    for i in 0..up.len() {
                        g[i] += up[i] * other[i];
                    }
                }
            }
            Op::Scale(a, factor) => {
                if self.wants(*a) {
                    let g = accumulator(grads, *a, up.len());
                    for i in 0..up.len() {
                        g[i] += up[i] * factor;
                    }
                }
            }
            Op::Relu(a) => {
                if self.wants(*a) {
                    let x = self.value(*a).values();
                    let g = accumulator(grads, *a, up.len());
                    for i in 0..up.len() {
                        if x[i] > 0.0 {
                            g[i] += up[i];
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if self.wants(*a) {
                    let y = self.nodes[idx].value.values();
                    let g = accumulator(grads, *a, up.len());
                    for i in 0..up.len() {
                        g[i] += up[i] * y[i] * (1.0 - y[i]);
                    }
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    let n = self.value(*a).numel();
                    let g = accumulator(grads, *a, n);
                    for v in g.iter_mut() {
                        *v += up[0];
                    }
                }
            }
            Op::Reshape(a) => {
                if self.wants(*a) {
                    add_into(accumulator(grads, *a, up.len()), up);
                }
            }
            Op::Embedding { table, ids } => {
                if self.wants(*table) {
                    let (vocab, dim) = self.value(*table).as_matrix("embedding")?;
                    let g = accumulator(grads, *table, vocab * dim);
                    for (pos, &id) in ids.iter().enumerate() {
                        let src = &up[pos * dim..(pos + 1) * dim];
                        add_into(&mut g[id * dim..(id + 1) * dim], src);
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if self.wants(*logits) {
                    let batch = targets.len();
                    let classes = probs.len() / batch;
                    let scale = up[0] / batch as f64;
                    let g = accumulator(grads, *logits, probs.len());
                    for (r, &t) in targets.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            g[r * classes + c] += scale * (probs[r * classes + c] - onehot);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulator(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
