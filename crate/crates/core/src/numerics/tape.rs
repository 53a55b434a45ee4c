//! Tape-based reverse-mode differentiation.
//!
//! Every primitive appends one node holding its forward value and whatever
//! it needs for the backward pass. [`Tape::backward`] walks the nodes once in
//! reverse, so the tape order is the topological order. Nodes that do not
//! depend on a gradient-requiring leaf are skipped.

use std::cell::RefCell;
use std::sync::Arc;

use rand::Rng as _;

use super::rng::Rng;
use super::tensor::{gemm, Tensor};
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
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    AddRow { a: Var, bias: Var },
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { a: Var, axis: usize, start: usize, end: usize },
    Row { a: Var, index: usize },
    StackRows(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Softmax { a: Var, axis: usize },
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Option<Vec<f64>>, probs: Vec<f64> },
    BceLogits { logits: Var, targets: Vec<f64>, weights: Option<Vec<f64>> },
    Conv1d { x: Var, w: Var, b: Var, dilation: usize, cols: Vec<f64> },
    Dropout { a: Var, mask: Vec<f64> },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed primitives.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` when `v` was unreachable.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    pub fn value(&self, v: Var) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// First element of `v`'s value.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.push_shared(Arc::new(value), Op::Leaf, requires_grad, "leaf")
    }

    /// Registers a shared tensor (typically a parameter) as a leaf.
    pub fn leaf_shared(&self, value: Arc<Tensor>, requires_grad: bool) -> Result<Var> {
        self.push_shared(value, Op::Leaf, requires_grad, "leaf")
    }

    pub fn constant(&self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    fn push_shared(&self, value: Arc<Tensor>, op: Op, requires_grad: bool, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(name.to_string()));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(nodes.len() - 1))
    }

    fn push(&self, value: Tensor, op: Op, inputs: &[Var], name: &str) -> Result<Var> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.0].requires_grad)
        };
        self.push_shared(Arc::new(value), op, requires_grad, name)
    }

    fn with_values<R>(&self, vars: &[Var], f: impl FnOnce(&[&Tensor]) -> R) -> R {
        let nodes = self.nodes.borrow();
        let vals: Vec<&Tensor> = vars.iter().map(|v| &*nodes[v.0].value).collect();
        f(&vals)
    }

    /// Matrix product. A rank-1 left operand is a row vector, a rank-1 right
    /// operand a column vector; the promoted dimension is dropped from the
    /// result.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (value, m, k, n) = self.with_values(&[a, b], |v| {
            let (x, y) = (v[0], v[1]);
            let (m, k1, a_vec) = match x.shape() {
                [k] => (1, *k, true),
                [m, k] => (*m, *k, false),
                s => return shape_err(format!("matmul lhs rank {}", s.len())),
            };
            let (k2, n, b_vec) = match y.shape() {
                [k] => (*k, 1, true),
                [k, n] => (*k, *n, false),
                s => return shape_err(format!("matmul rhs rank {}", s.len())),
            };
            if k1 != k2 {
                return shape_err(format!("matmul {:?} x {:?}", x.shape(), y.shape()));
            }
            let mut out = vec![0.0; m * n];
            gemm(m, k1, n, x.data(), false, y.data(), false, &mut out, false);
            let shape = match (a_vec, b_vec) {
                (true, true) => vec![],
                (true, false) => vec![n],
                (false, true) => vec![m],
                (false, false) => vec![m, n],
            };
            Ok((Tensor::new(shape, out)?, m, k1, n))
        })?;
        self.push(value, Op::MatMul { a, b, m, k, n }, &[a, b], "matmul")
    }

    fn elementwise2(&self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.with_values(&[a, b], |v| {
            if v[0].shape() != v[1].shape() {
                return shape_err(format!("{name} {:?} vs {:?}", v[0].shape(), v[1].shape()));
            }
            let data = v[0].data().iter().zip(v[1].data()).map(|(x, y)| f(*x, *y)).collect();
            Tensor::new(v[0].shape().to_vec(), data)
        })
    }

    fn elementwise1(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        self.with_values(&[a], |v| {
            let data = v[0].data().iter().map(|x| f(*x)).collect();
            Tensor::new(v[0].shape().to_vec(), data).expect("same shape")
        })
    }

    /// Elementwise sum. A rank-2 `a` with a rank-1 `b` adds `b` to every row.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() == 2 && sb.len() == 1 {
            if sa[1] != sb[0] {
                return shape_err(format!("row bias {sb:?} for {sa:?}"));
            }
            let value = self.with_values(&[a, b], |v| {
                let cols = sb[0];
                let mut data = v[0].data().to_vec();
                for row in data.chunks_exact_mut(cols.max(1)) {
                    add_into(row, v[1].data());
                }
                Tensor::new(sa.clone(), data)
            })?;
            return self.push(value, Op::AddRow { a, bias: b }, &[a, b], "add");
        }
        let value = self.elementwise2(a, b, "add", |x, y| x + y)?;
        self.push(value, Op::Add(a, b), &[a, b], "add")
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise2(a, b, "sub", |x, y| x - y)?;
        self.push(value, Op::Sub(a, b), &[a, b], "sub")
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise2(a, b, "mul", |x, y| x * y)?;
        self.push(value, Op::Mul(a, b), &[a, b], "mul")
    }

    pub fn scale(&self, a: Var, k: f64) -> Result<Var> {
        let value = self.elementwise1(a, |x| x * k);
        self.push(value, Op::Scale(a, k), &[a], "scale")
    }

    /// Adds the constant `k` to every element.
    pub fn shift(&self, a: Var, k: f64) -> Result<Var> {
        let value = self.elementwise1(a, |x| x + k);
        self.push(value, Op::Shift(a), &[a], "shift")
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        let value = self.elementwise1(a, |x| x.max(0.0));
        self.push(value, Op::Relu(a), &[a], "relu")
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        let value = self.elementwise1(a, sigmoid);
        self.push(value, Op::Sigmoid(a), &[a], "sigmoid")
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        let value = self.elementwise1(a, f64::tanh);
        self.push(value, Op::Tanh(a), &[a], "tanh")
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        let value = self.elementwise1(a, f64::exp);
        self.push(value, Op::Exp(a), &[a], "exp")
    }

    pub fn log(&self, a: Var) -> Result<Var> {
        let value = self.elementwise1(a, f64::ln);
        self.push(value, Op::Log(a), &[a], "log")
    }

    /// Concatenation of rank-1 tensors (axis 0) or rank-2 tensors along
    /// rows (axis 0) or columns (axis 1).
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return shape_err("concat of nothing");
        }
        let value = self.with_values(parts, |v| {
            let rank = v[0].rank();
            if v.iter().any(|t| t.rank() != rank) || rank == 0 || rank > 2 || axis >= rank {
                return shape_err(format!("concat rank {rank} along axis {axis}"));
            }
            if rank == 1 || axis == 0 {
                let cols = v[0].cols();
                if rank == 2 && v.iter().any(|t| t.cols() != cols) {
                    return shape_err("concat rows of different widths");
                }
                let data: Vec<f64> = v.iter().flat_map(|t| t.data().iter().copied()).collect();
                let shape = if rank == 1 {
                    vec![data.len()]
                } else {
                    vec![data.len() / cols.max(1), cols]
                };
                return Tensor::new(shape, data);
            }
            let rows = v[0].rows();
            if v.iter().any(|t| t.rows() != rows) {
                return shape_err("concat columns of different heights");
            }
            let total: usize = v.iter().map(|t| t.cols()).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for t in v {
                    data.extend_from_slice(t.row(r));
                }
            }
            Tensor::new(vec![rows, total], data)
        })?;
        self.push(value, Op::Concat { parts: parts.to_vec(), axis }, parts, "concat")
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(&self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let value = self.with_values(&[a], |v| {
            let t = v[0];
            match (t.shape(), axis) {
                ([n], 0) if start <= end && end <= *n => Ok(Tensor::vector(t.data()[start..end].to_vec())),
                ([r, c], 0) if start <= end && end <= *r => {
                    Tensor::new(vec![end - start, *c], t.data()[start * c..end * c].to_vec())
                }
                ([r, c], 1) if start <= end && end <= *c => {
                    let mut data = Vec::with_capacity(r * (end - start));
                    for i in 0..*r {
                        data.extend_from_slice(&t.row(i)[start..end]);
                    }
                    Tensor::new(vec![*r, end - start], data)
                }
                (s, _) => shape_err(format!("slice {start}..{end} on axis {axis} of {s:?}")),
            }
        })?;
        self.push(value, Op::Slice { a, axis, start, end }, &[a], "slice")
    }

    /// Row `index` of a rank-2 tensor as a vector.
    pub fn row(&self, a: Var, index: usize) -> Result<Var> {
        let value = self.with_values(&[a], |v| match v[0].shape() {
            [r, _] if index < *r => Ok(Tensor::vector(v[0].row(index).to_vec())),
            s => shape_err(format!("row {index} of {s:?}")),
        })?;
        self.push(value, Op::Row { a, index }, &[a], "row")
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return shape_err("stack of nothing");
        }
        let value = self.with_values(rows, |v| {
            let n = v[0].numel();
            if v.iter().any(|t| t.rank() != 1 || t.numel() != n) {
                return shape_err("stack_rows needs equal-length vectors");
            }
            let data: Vec<f64> = v.iter().flat_map(|t| t.data().iter().copied()).collect();
            Tensor::new(vec![v.len(), n], data)
        })?;
        self.push(value, Op::StackRows(rows.to_vec()), rows, "stack_rows")
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.with_values(&[a], |v| v[0].clone().reshaped(shape.to_vec()))?;
        self.push(value, Op::Reshape(a), &[a], "reshape")
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        let s = self.with_values(&[a], |v| v[0].data().iter().sum::<f64>());
        self.push(Tensor::scalar(s), Op::Sum(a), &[a], "sum")
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let m = self.with_values(&[a], |v| {
            if v[0].numel() == 0 {
                return shape_err("mean of empty tensor");
            }
            Ok(v[0].data().iter().sum::<f64>() / v[0].numel() as f64)
        })?;
        self.push(Tensor::scalar(m), Op::Mean(a), &[a], "mean")
    }

    /// Softmax of a vector (axis 0) or along rows (axis 1) / columns (axis
    /// 0) of a matrix.
    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        let value = self.with_values(&[a], |v| {
            let t = v[0];
            let mut out = t.data().to_vec();
            match (t.shape(), axis) {
                ([_], 0) => softmax_inplace(&mut out, 1),
                ([_, c], 1) => {
                    for row in out.chunks_exact_mut((*c).max(1)) {
                        softmax_inplace(row, 1);
                    }
                }
                ([_, c], 0) => {
                    for j in 0..*c {
                        softmax_inplace(&mut out[j..], *c);
                    }
                }
                (s, _) => return shape_err(format!("softmax axis {axis} of {s:?}")),
            }
            Tensor::new(t.shape().to_vec(), out)
        })?;
        self.push(value, Op::Softmax { a, axis }, &[a], "softmax")
    }

    /// Weighted negative log-likelihood summed over rows:
    /// `sum_n w[t_n] * -log softmax(logits_n)[t_n]`. A rank-1 `logits`
    /// is a single row.
    pub fn cross_entropy(&self, logits: Var, targets: &[usize], weights: Option<&[f64]>) -> Result<Var> {
        let (loss, probs) = self.with_values(&[logits], |v| {
            let t = v[0];
            let (rows, cols) = match t.shape() {
                [c] => (1, *c),
                [r, c] => (*r, *c),
                s => return shape_err(format!("cross_entropy of {s:?}")),
            };
            if targets.len() != rows {
                return shape_err(format!("{} targets for {rows} rows", targets.len()));
            }
            if let Some(w) = weights {
                if w.len() != cols {
                    return shape_err(format!("{} class weights for {cols} classes", w.len()));
                }
            }
            let mut probs = t.data().to_vec();
            let mut loss = 0.0;
            for (r, &target) in targets.iter().enumerate() {
                if target >= cols {
                    return shape_err(format!("target {target} out of {cols} classes"));
                }
                let row = &t.data()[r * cols..(r + 1) * cols];
                let lse = log_sum_exp(row);
                let w = weights.map_or(1.0, |w| w[target]);
                loss += w * (lse - row[target]);
                for (p, x) in probs[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                    *p = (x - lse).exp();
                }
            }
            Ok((loss, probs))
        })?;
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.map(<[f64]>::to_vec),
                probs,
            },
            &[logits],
            "cross_entropy",
        )
    }

    /// Binary cross-entropy on logits, summed over elements, with optional
    /// per-element weights.
    pub fn bce_with_logits(&self, logits: Var, targets: &[f64], weights: Option<&[f64]>) -> Result<Var> {
        let loss = self.with_values(&[logits], |v| {
            let z = v[0].data();
            if z.len() != targets.len() || weights.is_some_and(|w| w.len() != z.len()) {
                return shape_err("bce_with_logits length mismatch");
            }
            Ok(z.iter()
                .zip(targets)
                .enumerate()
                .map(|(i, (&z, &y))| {
                    let l = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
                    weights.map_or(1.0, |w| w[i]) * l
                })
                .sum::<f64>())
        })?;
        self.push(
            Tensor::scalar(loss),
            Op::BceLogits {
                logits,
                targets: targets.to_vec(),
                weights: weights.map(<[f64]>::to_vec),
            },
            &[logits],
            "bce_with_logits",
        )
    }

    /// Same-length dilated 1-D convolution over time. `x` is `[T, C_in]`,
    /// `w` is `[K, C_in, C_out]` with odd `K`, `b` is `[C_out]`. Tap `k`
    /// reads frame `t + (k - (K-1)/2) * dilation`; frames outside `[0, T)`
    /// are zero.
    pub fn conv1d_dilated(&self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var> {
        let (value, cols) = self.with_values(&[x, w, b], |v| {
            let (xt, wt, bt) = (v[0], v[1], v[2]);
            let (t_len, c_in) = match xt.shape() {
                [t, c] => (*t, *c),
                s => return shape_err(format!("conv1d input {s:?}")),
            };
            let (k, c_out) = match wt.shape() {
                [k, ci, co] if *ci == c_in && k % 2 == 1 => (*k, *co),
                s => return shape_err(format!("conv1d weight {s:?} for {c_in} input channels")),
            };
            if bt.shape() != [c_out] {
                return shape_err(format!("conv1d bias {:?}", bt.shape()));
            }
            if dilation == 0 {
                return shape_err("conv1d dilation 0");
            }
            let cols = im2col(xt.data(), t_len, c_in, k, dilation);
            let mut out = vec![0.0; t_len * c_out];
            for row in out.chunks_exact_mut(c_out.max(1)) {
                row.copy_from_slice(bt.data());
            }
            gemm(t_len, k * c_in, c_out, &cols, false, wt.data(), false, &mut out, true);
            Ok((Tensor::new(vec![t_len, c_out], out)?, cols))
        })?;
        self.push(value, Op::Conv1d { x, w, b, dilation, cols }, &[x, w, b], "conv1d_dilated")
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - p)`.
    pub fn dropout(&self, a: Var, p: f64, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p}")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let n = self.with_values(&[a], |v| v[0].numel());
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let value = self.with_values(&[a], |v| {
            let data = v[0].data().iter().zip(&mask).map(|(x, m)| x * m).collect();
            Tensor::new(v[0].shape().to_vec(), data)
        })?;
        self.push(value, Op::Dropout { a, mask }, &[a], "dropout")
    }

    /// Reverse pass from a scalar. Gradients are freshly zeroed on every
    /// call.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.numel() != 1 {
            return shape_err(format!(
                "backward from non-scalar {:?}",
                nodes[loss.0].value.shape()
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop(&nodes, &node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, g) in grads.iter().enumerate() {
            if g.as_ref().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::Numeric(format!("gradient of node {i}")));
            }
        }
        Ok(Gradients { grads })
    }
}

fn softmax_inplace(v: &mut [f64], stride: usize) {
    let idx = (0..v.len()).step_by(stride);
    let max = idx.clone().map(|i| v[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for i in idx.clone() {
        v[i] = (v[i] - max).exp();
        total += v[i];
    }
    for i in idx {
        v[i] /= total;
    }
}

fn im2col(x: &[f64], t_len: usize, c_in: usize, k: usize, dilation: usize) -> Vec<f64> {
    let half = (k / 2) as isize;
    let width = k * c_in;
    let mut cols = vec![0.0; t_len * width];
    for t in 0..t_len {
        for tap in 0..k {
            let src = t as isize + (tap as isize - half) * dilation as isize;
            if src >= 0 && (src as usize) < t_len {
                let s = src as usize;
                cols[t * width + tap * c_in..t * width + (tap + 1) * c_in]
                    .copy_from_slice(&x[s * c_in..(s + 1) * c_in]);
            }
        }
    }
    cols
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
    f(slot);
}

fn backprop(nodes: &[Node], op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |v: &Var| &*nodes[v.0].value;
    match op {
        Op::Leaf => {}
        Op::MatMul { a, b, m, k, n } => {
            let (av, bv) = (val(a), val(b));
            // dA = dC B^T ; dB = A^T dC
            accumulate(nodes, grads, *a, |ga| gemm(*m, *n, *k, g, false, bv.data(), true, ga, true));
            accumulate(nodes, grads, *b, |gb| gemm(*k, *m, *n, av.data(), true, g, false, gb, true));
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, |ga| add_into(ga, g));
            accumulate(nodes, grads, *b, |gb| add_into(gb, g));
        }
        Op::AddRow { a, bias } => {
            accumulate(nodes, grads, *a, |ga| add_into(ga, g));
            let cols = val(bias).numel();
            accumulate(nodes, grads, *bias, |gb| {
                for row in g.chunks_exact(cols.max(1)) {
                    add_into(gb, row);
                }
            });
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, |ga| add_into(ga, g));
            accumulate(nodes, grads, *b, |gb| {
                for (d, s) in gb.iter_mut().zip(g) {
                    *d -= s;
                }
            });
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(a).data(), val(b).data());
            accumulate(nodes, grads, *a, |ga| {
                for ((d, s), y) in ga.iter_mut().zip(g).zip(bv) {
                    *d += s * y;
                }
            });
            accumulate(nodes, grads, *b, |gb| {
                for ((d, s), x) in gb.iter_mut().zip(g).zip(av) {
                    *d += s * x;
                }
            });
        }
        Op::Scale(a, k) => accumulate(nodes, grads, *a, |ga| {
            for (d, s) in ga.iter_mut().zip(g) {
                *d += s * k;
            }
        }),
        Op::Shift(a) | Op::Reshape(a) => accumulate(nodes, grads, *a, |ga| add_into(ga, g)),
        Op::Relu(a) => {
            let x = val(a).data();
            accumulate(nodes, grads, *a, |ga| {
                for ((d, s), x) in ga.iter_mut().zip(g).zip(x) {
                    if *x > 0.0 {
                        *d += s;
                    }
                }
            })
        }
        Op::Sigmoid(a) => accumulate(nodes, grads, *a, |ga| {
            for ((d, s), y) in ga.iter_mut().zip(g).zip(out.data()) {
                *d += s * y * (1.0 - y);
            }
        }),
        Op::Tanh(a) => accumulate(nodes, grads, *a, |ga| {
            for ((d, s), y) in ga.iter_mut().zip(g).zip(out.data()) {
                *d += s * (1.0 - y * y);
            }
        }),
        Op::Exp(a) => accumulate(nodes, grads, *a, |ga| {
            for ((d, s), y) in ga.iter_mut().zip(g).zip(out.data()) {
                *d += s * y;
            }
        }),
        Op::Log(a) => {
            let x = val(a).data();
            accumulate(nodes, grads, *a, |ga| {
                for ((d, s), x) in ga.iter_mut().zip(g).zip(x) {
                    *d += s / x;
                }
            })
        }
        Op::Concat { parts, axis } => {
            let rank = out.rank();
            if rank == 1 || *axis == 0 {
                let mut offset = 0;
                for p in parts {
                    let n = val(p).numel();
                    accumulate(nodes, grads, *p, |gp| add_into(gp, &g[offset..offset + n]));
                    offset += n;
                }
            } else {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = val(p).cols();
                    accumulate(nodes, grads, *p, |gp| {
                        for (r, dst) in gp.chunks_exact_mut(w.max(1)).enumerate() {
                            add_into(dst, &g[r * total + offset..r * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
        }
        Op::Slice { a, axis, start, end } => {
            let src = val(a);
            accumulate(nodes, grads, *a, |ga| match (src.rank(), axis) {
                (1, _) => add_into(&mut ga[*start..*end], g),
                (_, 0) => {
                    let c = src.cols();
                    add_into(&mut ga[start * c..end * c], g)
                }
                _ => {
                    let c = src.cols();
                    let w = end - start;
                    for r in 0..src.rows() {
                        add_into(&mut ga[r * c + start..r * c + end], &g[r * w..(r + 1) * w]);
                    }
                }
            })
        }
        Op::Row { a, index } => {
            let c = val(a).cols();
            accumulate(nodes, grads, *a, |ga| add_into(&mut ga[index * c..(index + 1) * c], g))
        }
        Op::StackRows(rows) => {
            let mut offset = 0;
            for r in rows {
                let n = val(r).numel();
                accumulate(nodes, grads, *r, |gr| add_into(gr, &g[offset..offset + n]));
                offset += n;
            }
        }
        Op::Sum(a) => accumulate(nodes, grads, *a, |ga| ga.iter_mut().for_each(|d| *d += g[0])),
        Op::Mean(a) => {
            let n = val(a).numel() as f64;
            accumulate(nodes, grads, *a, |ga| ga.iter_mut().for_each(|d| *d += g[0] / n))
        }
        Op::Softmax { a, axis } => {
            let y = out.data();
            let (groups, stride, len): (Vec<usize>, usize, usize) = match (out.shape(), axis) {
                ([n], _) => (vec![0], 1, *n),
                ([r, c], 1) => ((0..*r).map(|i| i * c).collect(), 1, *c),
                ([r, c], _) => ((0..*c).collect(), *c, *r),
                _ => unreachable!("validated in forward"),
            };
            accumulate(nodes, grads, *a, |ga| {
                for start in groups {
                    let idx = (0..len).map(|j| start + j * stride);
                    let dot: f64 = idx.clone().map(|i| g[i] * y[i]).sum();
                    for i in idx {
                        ga[i] += y[i] * (g[i] - dot);
                    }
                }
            })
        }
        Op::CrossEntropy { logits, targets, weights, probs } => {
            let cols = val(logits).cols();
            accumulate(nodes, grads, *logits, |gl| {
                for (r, &t) in targets.iter().enumerate() {
                    let w = weights.as_ref().map_or(1.0, |w| w[t]) * g[0];
                    let row = &mut gl[r * cols..(r + 1) * cols];
                    for (j, d) in row.iter_mut().enumerate() {
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        *d += w * (probs[r * cols + j] - onehot);
                    }
                }
            })
        }
        Op::BceLogits { logits, targets, weights } => {
            let z = val(logits).data();
            accumulate(nodes, grads, *logits, |gl| {
                for (i, d) in gl.iter_mut().enumerate() {
                    let w = weights.as_ref().map_or(1.0, |w| w[i]);
                    *d += g[0] * w * (sigmoid(z[i]) - targets[i]);
                }
            })
        }
        Op::Conv1d { x, w, b, dilation, cols } => {
            let (xv, wv) = (val(x), val(w));
            let (t_len, c_in) = (xv.rows(), xv.cols());
            let (k, c_out) = (wv.shape()[0], wv.shape()[2]);
            accumulate(nodes, grads, *b, |gb| {
                for row in g.chunks_exact(c_out.max(1)) {
                    add_into(gb, row);
                }
            });
            accumulate(nodes, grads, *w, |gw| gemm(k * c_in, t_len, c_out, cols, true, g, false, gw, true));
            accumulate(nodes, grads, *x, |gx| {
                let width = k * c_in;
                let mut dcols = vec![0.0; t_len * width];
                gemm(t_len, c_out, width, g, false, wv.data(), true, &mut dcols, false);
                let half = (k / 2) as isize;
                for t in 0..t_len {
                    for tap in 0..k {
                        let src = t as isize + (tap as isize - half) * *dilation as isize;
                        if src >= 0 && (src as usize) < t_len {
                            let s = src as usize;
                            add_into(
                                &mut gx[s * c_in..(s + 1) * c_in],
                                &dcols[t * width + tap * c_in..t * width + (tap + 1) * c_in],
                            );
                        }
                    }
                }
            })
        }
        Op::Dropout { a, mask } => accumulate(nodes, grads, *a, |ga| {
            for ((d, s), m) in ga.iter_mut().zip(g).zip(mask) {
                *d += s * m;
            }
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{check_gradients, GradCheck};
    use crate::numerics::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng::seeded(seed);
        let n = shape.iter().product();
        let data = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    fn check(inputs: Vec<Tensor>, f: impl Fn(&Tape, &[Var]) -> Result<Var>) {
        let report = check_gradients(&inputs, &f, &GradCheck::default()).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn softmax_uniform_and_normalized() {
        let t = Tape::new();
        let x = t.constant(Tensor::full(&[4], 2.5)).unwrap();
        let y = t.value(t.softmax(x, 0).unwrap());
        assert!(y.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
        let m = t.constant(randn(&[3, 5], 1)).unwrap();
        for axis in [0, 1] {
            let s = t.value(t.softmax(m, axis).unwrap());
            assert!(s.data().iter().all(|&v| v > 0.0));
        }
        let rows = t.value(t.softmax(m, 1).unwrap());
        for r in 0..3 {
            assert!((rows.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_convolution() {
        let t = Tape::new();
        let data = randn(&[6, 1], 2);
        let x = t.constant(data.clone()).unwrap();
        let w = t.constant(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap()).unwrap();
        let b = t.constant(Tensor::zeros(&[1])).unwrap();
        let y = t.conv1d_dilated(x, w, b, 4).unwrap();
        assert_eq!(*t.value(y), data);
    }

    #[test]
    fn cross_entropy_large_margin() {
        let t = Tape::new();
        let x = t.constant(Tensor::vector(vec![20.0, 0.0, 0.0])).unwrap();
        let l = t.cross_entropy(x, &[0], None).unwrap();
        assert!(t.item(l) < 1e-6 * 5.0);
        assert!(t.item(l) > 0.0);
    }

    #[test]
    fn backward_basics() {
        let t = Tape::new();
        let x = t.leaf(randn(&[5], 3), true).unwrap();
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0; 5]);

        let t = Tape::new();
        let x = t.leaf(randn(&[3], 3), true).unwrap();
        let c = t.constant(Tensor::scalar(4.0)).unwrap();
        let g = t.backward(c).unwrap();
        assert_eq!(g.get_or_zeros(x, 3), vec![0.0; 3]);

        let v = t.constant(Tensor::zeros(&[2])).unwrap();
        assert!(matches!(t.backward(v), Err(Error::Shape(_))));
    }

    #[test]
    fn shape_and_numeric_errors() {
        let t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = t.constant(Tensor::zeros(&[2, 3])).unwrap();
        assert!(matches!(t.matmul(a, b), Err(Error::Shape(_))));
        let z = t.constant(Tensor::vector(vec![0.0])).unwrap();
        assert!(matches!(t.log(z), Err(Error::Numeric(_))));
        assert!(t.constant(Tensor::vector(vec![f64::NAN])).is_err());
    }

    #[test]
    fn gradcheck_arithmetic() {
        check(vec![randn(&[3, 4], 10), randn(&[4, 2], 11)], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            t.sum(t.mul(y, y)?)
        });
        check(vec![randn(&[4], 12), randn(&[4, 3], 13), randn(&[3], 14)], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            let z = t.matmul(v[1], v[2])?;
            let s = t.add(y, v[2])?;
            t.add(t.sum(t.mul(s, s)?)?, t.sum(t.tanh(z)?)?)
        });
        check(vec![randn(&[3, 2], 15), randn(&[2], 16), randn(&[3, 2], 17)], |t, v| {
            let y = t.add(v[0], v[1])?;
            let d = t.sub(y, v[2])?;
            let s = t.shift(t.scale(d, -0.7)?, 0.3)?;
            t.mean(t.mul(s, s)?)
        });
    }

    #[test]
    fn gradcheck_nonlinearities() {
        check(vec![randn(&[7], 20)], |t, v| t.sum(t.relu(v[0])?));
        check(vec![randn(&[7], 21)], |t, v| t.sum(t.sigmoid(v[0])?));
        check(vec![randn(&[7], 22)], |t, v| t.sum(t.mul(t.tanh(v[0])?, v[0])?));
        check(vec![randn(&[7], 23)], |t, v| {
            let e = t.exp(v[0])?;
            t.sum(t.log(t.shift(e, 1.0)?)?)
        });
    }

    #[test]
    fn gradcheck_structural() {
        check(vec![randn(&[3], 30), randn(&[2], 31), randn(&[2, 3], 32), randn(&[4, 3], 33)], |t, v| {
            let c = t.concat(&[v[0], v[1]], 0)?;
            let r = t.concat(&[v[2], v[3]], 0)?;
            let k = t.concat(&[v[2], t.slice(v[3], 0, 1, 3)?], 1)?;
            let row = t.row(r, 4)?;
            let s = t.slice(c, 0, 1, 4)?;
            let cs = t.slice(k, 1, 2, 5)?;
            let st = t.stack_rows(&[s, row])?;
            let flat = t.reshape(st, &[6])?;
            let q = t.mul(flat, flat)?;
            t.add(t.sum(q)?, t.sum(t.tanh(cs)?)?)
        });
    }

    #[test]
    fn gradcheck_softmax_and_losses() {
        let w = randn(&[5], 40);
        check(vec![randn(&[4, 5], 41), randn(&[4, 5], 42)], |t, v| {
            let p = t.softmax(v[0], 1)?;
            let q = t.softmax(v[0], 0)?;
            let pv = t.softmax(t.row(v[0], 1)?, 0)?;
            let a = t.sum(t.mul(p, v[1])?)?;
            let b = t.sum(t.mul(q, v[1])?)?;
            let c = t.sum(t.mul(pv, t.row(v[1], 2)?)?)?;
            t.add(t.add(a, b)?, c)
        });
        let weights: Vec<f64> = w.data().iter().map(|x| x.abs() + 0.1).collect();
        check(vec![randn(&[4, 5], 43)], move |t, v| {
            let a = t.cross_entropy(v[0], &[0, 4, 2, 2], Some(&weights))?;
            let b = t.cross_entropy(t.row(v[0], 3)?, &[1], None)?;
            t.add(a, b)
        });
        check(vec![randn(&[6], 44)], |t, v| {
            t.bce_with_logits(v[0], &[0.0, 1.0, 1.0, 0.0, 0.5, 1.0], Some(&[1.0, 2.0, 0.5, 1.0, 1.0, 3.0]))
        });
    }

    #[test]
    fn gradcheck_conv1d() {
        for (k, d) in [(3, 1), (3, 4), (1, 1), (5, 2)] {
            check(vec![randn(&[9, 3], 50), randn(&[k, 3, 2], 51), randn(&[2], 52)], move |t, v| {
                let y = t.conv1d_dilated(v[0], v[1], v[2], d)?;
                t.sum(t.mul(y, y)?)
            });
        }
    }

    #[test]
    fn gradcheck_dropout() {
        check(vec![randn(&[10], 60)], |t, v| {
            let mut r = rng::seeded(5);
            let y = t.dropout(v[0], 0.3, &mut r)?;
            t.sum(t.mul(y, v[0])?)
        });
    }
}
