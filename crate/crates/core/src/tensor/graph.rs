//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is built during one forward pass. Every operation appends a
//! node holding its computed value; [`Graph::backward`] walks the tape in
//! reverse creation order, which is a valid reverse topological order since
//! inputs always precede their consumers.

use std::collections::BTreeMap;

use super::kernels;
use super::value::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`]; the wrapped index is the node id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, S),
    AddScalar(Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
    },
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Abs(Var),
    Max(Var, Var),
    Min(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    StopGradient(Var),
    BceWithLogits(Var, Vec<S>),
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to the graph's trainable leaves.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientMap<S> {
    entries: BTreeMap<Var, Tensor<S>>,
}

impl<S: Scalar> GradientMap<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.entries.get(&v)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor<S>)> {
        self.entries.iter().map(|(&v, t)| (v, t))
    }
}

/// One forward pass worth of recorded operations.
#[derive(Debug, Default)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
}

fn same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn matrix_dims<S: Scalar>(op: &'static str, t: &Tensor<S>) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::Shape(format!(
            "{op} expects a matrix, got shape {:?}",
            t.shape()
        ))),
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Direct inputs of a node, in operand order.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        match &self.nodes[v.0].op {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::AddRow(a, b)
            | Op::MatMul(a, b)
            | Op::MatMulNt(a, b)
            | Op::Max(a, b)
            | Op::Min(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Log(a)
            | Op::Abs(a)
            | Op::SliceCols(a, ..)
            | Op::GatherRows(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::StopGradient(a)
            | Op::BceWithLogits(a, _) => vec![*a],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::ConcatCols(parts) => parts.clone(),
        }
    }

    pub fn is_stop_gradient(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::StopGradient(_))
    }

    /// Nodes reachable from `v` by walking inputs without crossing a
    /// stop-gradient node. Independent of [`Graph::backward`]; used to trace
    /// which leaves a loss can possibly send gradient to.
    pub fn live_ancestors(&self, v: Var) -> std::collections::BTreeSet<Var> {
        let mut seen = std::collections::BTreeSet::new();
        let mut stack = vec![v];
        while let Some(u) = stack.pop() {
            if !seen.insert(u) || self.is_stop_gradient(u) {
                continue;
            }
            stack.extend(self.inputs(u));
        }
        seen
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    fn zip(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
        node: Op<S>,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, node, rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(S) -> S, node: Op<S>) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(out, node, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("max", a, b, |x, y| if y > x { y } else { x }, Op::Max(a, b))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("min", a, b, |x, y| if y < x { y } else { x }, Op::Min(a, b))
    }

    pub fn scale(&mut self, a: Var, k: S) -> Var {
        self.unary(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: S) -> Var {
        self.unary(a, |x| x + k, Op::AddScalar(a))
    }

    /// `k - a`.
    pub fn rsub_scalar(&mut self, k: S, a: Var) -> Var {
        let neg = self.scale(a, -S::one());
        self.add_scalar(neg, k)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > S::zero() { x } else { S::zero() }, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), Op::Log(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    /// Forward identity whose backward contributes nothing to `a`.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let out = self.value(a).clone();
        self.push(out, Op::StopGradient(a), false)
    }

    /// Adds the vector `b` (length = last dimension of `a`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let c = ta.cols();
        if tb.len() != c {
            return Err(Error::dim("add_row", ta.shape(), tb.shape()));
        }
        let bias = tb.data();
        let data = ta
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(bias).map(|(&x, &y)| x + y))
            .collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::AddRow(a, b), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = matrix_dims("matmul", ta)?;
        let (k2, n) = matrix_dims("matmul", tb)?;
        if k != k2 {
            return Err(Error::dim("matmul", ta.shape(), tb.shape()));
        }
        let data = kernels::matmul(ta.data(), tb.data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = matrix_dims("matmul_nt", ta)?;
        let (n, k2) = matrix_dims("matmul_nt", tb)?;
        if k != k2 {
            return Err(Error::dim("matmul_nt", ta.shape(), tb.shape()));
        }
        let data = kernels::matmul_nt(ta.data(), tb.data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::MatMulNt(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = matrix_dims("transpose", ta)?;
        let data = kernels::transpose(ta.data(), m, n);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(vec![n, m], data), Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Softmax over the last dimension, stabilized by max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.is_empty() {
            return Err(Error::dim("softmax", ta.shape(), &[]));
        }
        let c = ta.cols();
        let mut data = Vec::with_capacity(ta.len());
        for row in ta.data().chunks(c) {
            let m = row.iter().fold(S::neg_infinity(), |m, &x| m.max(x));
            let start = data.len();
            let mut sum = S::zero();
            for &x in row {
                let e = (x - m).exp();
                sum += e;
                data.push(e);
            }
            for y in &mut data[start..] {
                *y /= sum;
            }
        }
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// Log-softmax over the last dimension.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.is_empty() {
            return Err(Error::dim("log_softmax", ta.shape(), &[]));
        }
        let c = ta.cols();
        let mut data = Vec::with_capacity(ta.len());
        for row in ta.data().chunks(c) {
            let m = row.iter().fold(S::neg_infinity(), |m, &x| m.max(x));
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<S>().ln();
            data.extend(row.iter().map(|&x| x - lse));
        }
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::LogSoftmax(a), rg))
    }

    /// Normalizes each last-dimension slice to zero mean and unit variance,
    /// then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: S) -> Result<Var> {
        if eps.is_nan() || eps <= S::zero() {
            return Err(Error::Parameter(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let c = tx.cols();
        if tg.len() != c || tb.len() != c {
            return Err(Error::dim("layer_norm", tx.shape(), tg.shape()));
        }
        let n = S::from_usize_lossy(c);
        let mut xhat = Vec::with_capacity(tx.len());
        let mut inv_std = Vec::with_capacity(tx.rows());
        let mut data = Vec::with_capacity(tx.len());
        for row in tx.data().chunks(c) {
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let is = S::one() / (var + eps).sqrt();
            inv_std.push(is);
            for ((&v, &g), &b) in row.iter().zip(tg.data()).zip(tb.data()) {
                let h = (v - mean) * is;
                xhat.push(h);
                data.push(h * g + b);
            }
        }
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let (rows, _) = matrix_dims("concat_cols", self.value(*first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = matrix_dims("concat_cols", self.value(p))?;
            if r != rows {
                return Err(Error::dim("concat_cols", self.value(*first).shape(), self.value(p).shape()));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::from_parts(vec![rows, total], data),
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        let (rows, cols) = matrix_dims("slice_cols", ta)?;
        if start >= end || end > cols {
            return Err(Error::Shape(format!(
                "column range {start}..{end} invalid for {:?}",
                ta.shape()
            )));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(rows * w);
        for row in ta.data().chunks(cols) {
            data.extend_from_slice(&row[start..end]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::from_parts(vec![rows, w], data),
            Op::SliceCols(a, start, end),
            rg,
        ))
    }

    /// Rows of a matrix picked by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let (rows, cols) = matrix_dims("gather_rows", ta)?;
        if indices.is_empty() {
            return Err(Error::Shape("gather of zero rows".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape(format!("row {bad} out of range for {:?}", ta.shape())));
        }
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(ta.row(i));
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::from_parts(vec![indices.len(), cols], data),
            Op::GatherRows(a, indices.to_vec()),
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<S>();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().copied().sum::<S>() / S::from_usize_lossy(t.len());
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Elementwise binary cross-entropy between `sigmoid(logits)` and fixed
    /// `targets`, computed in the overflow-free form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor<S>) -> Result<Var> {
        let tl = self.value(logits);
        same_shape("bce_with_logits", tl, targets)?;
        let data = tl
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&x, &t)| x.max(S::zero()) - x * t + (-x.abs()).exp().ln_1p())
            .collect();
        let out = Tensor::from_parts(tl.shape().to_vec(), data);
        let rg = self.rg(&[logits]);
        Ok(self.push(out, Op::BceWithLogits(logits, targets.data().to_vec()), rg))
    }

    /// Reverse-mode gradients of the scalar `loss`.
    ///
    /// Every trainable leaf gets an entry (zeros when unreachable); a loss that
    /// does not depend on any trainable leaf yields an empty map.
    pub fn backward(&self, loss: Var) -> Result<GradientMap<S>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut map = GradientMap::default();
        if !self.requires_grad(loss) {
            return Ok(map);
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![S::one()]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Op::Leaf = node.op {
                map.entries
                    .insert(Var(id), Tensor::from_parts(node.value.shape().to_vec(), g));
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                map.entries
                    .entry(Var(id))
                    .or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(map)
    }

    fn accumulate(&self, grads: &mut [Option<Vec<S>>], v: Var, g: Vec<S>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, x) in acc.iter_mut().zip(g) {
                    *a += x;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf | Op::StopGradient(_) => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let d = g.iter().zip(val(*b)).map(|(&x, &bv)| x * bv).collect();
                    self.accumulate(grads, *a, d);
                }
                if wants(*b) {
                    let d = g.iter().zip(val(*a)).map(|(&x, &av)| x * av).collect();
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                if wants(*a) {
                    let d = g.iter().zip(bv).map(|(&x, &d)| x / d).collect();
                    self.accumulate(grads, *a, d);
                }
                if wants(*b) {
                    let d = g
                        .iter()
                        .zip(y)
                        .zip(bv)
                        .map(|((&x, &q), &d)| -x * q / d)
                        .collect();
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Max(a, b) | Op::Min(a, b) => {
                // Ties route to the first operand.
                let (av, bv) = (val(*a), val(*b));
                let is_max = matches!(node.op, Op::Max(..));
                let picks_b: Vec<bool> = av
                    .iter()
                    .zip(bv)
                    .map(|(&x, &z)| if is_max { z > x } else { z < x })
                    .collect();
                if wants(*a) {
                    let d = g
                        .iter()
                        .zip(&picks_b)
                        .map(|(&x, &pb)| if pb { S::zero() } else { x })
                        .collect();
                    self.accumulate(grads, *a, d);
                }
                if wants(*b) {
                    let d = g
                        .iter()
                        .zip(&picks_b)
                        .map(|(&x, &pb)| if pb { x } else { S::zero() })
                        .collect();
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Scale(a, k) => {
                self.accumulate(grads, *a, g.iter().map(|&x| x * *k).collect());
            }
            Op::AddScalar(a) | Op::Reshape(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                if wants(*b) {
                    let c = node.value.cols();
                    let mut d = vec![S::zero(); c];
                    for row in g.chunks(c) {
                        for (acc, &x) in d.iter_mut().zip(row) {
                            *acc += x;
                        }
                    }
                    self.accumulate(grads, *b, d);
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if wants(*a) {
                    self.accumulate(grads, *a, kernels::matmul_nt(g, val(*b), m, n, k));
                }
                if wants(*b) {
                    self.accumulate(grads, *b, kernels::matmul_tn(val(*a), g, m, k, n));
                }
            }
            Op::MatMulNt(a, b) => {
                let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[0]);
                if wants(*a) {
                    self.accumulate(grads, *a, kernels::matmul(g, val(*b), m, n, k));
                }
                if wants(*b) {
                    self.accumulate(grads, *b, kernels::matmul_tn(g, val(*a), m, n, k));
                }
            }
            Op::Transpose(a) => {
                let s = node.value.shape();
                self.accumulate(grads, *a, kernels::transpose(g, s[0], s[1]));
            }
            Op::Softmax(a) => {
                let c = node.value.cols();
                let mut d = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(c).zip(y.chunks(c)) {
                    let dot: S = gr.iter().zip(yr).map(|(&x, &p)| x * p).sum();
                    d.extend(gr.iter().zip(yr).map(|(&x, &p)| p * (x - dot)));
                }
                self.accumulate(grads, *a, d);
            }
            Op::LogSoftmax(a) => {
                let c = node.value.cols();
                let mut d = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(c).zip(y.chunks(c)) {
                    let total: S = gr.iter().copied().sum();
                    d.extend(gr.iter().zip(yr).map(|(&x, &ly)| x - ly.exp() * total));
                }
                self.accumulate(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let c = node.value.cols();
                let n = S::from_usize_lossy(c);
                let gv = val(*gain);
                if wants(*x) {
                    let mut d = Vec::with_capacity(g.len());
                    for ((gr, hr), &is) in g.chunks(c).zip(xhat.chunks(c)).zip(inv_std) {
                        let dh: Vec<S> = gr.iter().zip(gv).map(|(&a, &b)| a * b).collect();
                        let mean_dh = dh.iter().copied().sum::<S>() / n;
                        let mean_dh_h =
                            dh.iter().zip(hr).map(|(&a, &b)| a * b).sum::<S>() / n;
                        d.extend(
                            dh.iter()
                                .zip(hr)
                                .map(|(&a, &h)| is * (a - mean_dh - h * mean_dh_h)),
                        );
                    }
                    self.accumulate(grads, *x, d);
                }
                if wants(*gain) {
                    let mut d = vec![S::zero(); c];
                    for (gr, hr) in g.chunks(c).zip(xhat.chunks(c)) {
                        for ((acc, &a), &h) in d.iter_mut().zip(gr).zip(hr) {
                            *acc += a * h;
                        }
                    }
                    self.accumulate(grads, *gain, d);
                }
                if wants(*bias) {
                    let mut d = vec![S::zero(); c];
                    for gr in g.chunks(c) {
                        for (acc, &a) in d.iter_mut().zip(gr) {
                            *acc += a;
                        }
                    }
                    self.accumulate(grads, *bias, d);
                }
            }
            Op::Relu(a) => {
                let d = g
                    .iter()
                    .zip(val(*a))
                    .map(|(&x, &v)| if v > S::zero() { x } else { S::zero() })
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = g
                    .iter()
                    .zip(y)
                    .map(|(&x, &s)| x * s * (S::one() - s))
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Log(a) => {
                let d = g.iter().zip(val(*a)).map(|(&x, &v)| x / v).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Abs(a) => {
                let d = g
                    .iter()
                    .zip(val(*a))
                    .map(|(&x, &v)| {
                        if v > S::zero() {
                            x
                        } else if v < S::zero() {
                            -x
                        } else {
                            S::zero()
                        }
                    })
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p.0].value.cols();
                    if wants(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for row in g.chunks(total) {
                            d.extend_from_slice(&row[offset..offset + w]);
                        }
                        self.accumulate(grads, p, d);
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let cols = self.nodes[a.0].value.cols();
                let w = end - start;
                let mut d = vec![S::zero(); self.nodes[a.0].value.len()];
                for (dr, gr) in d.chunks_mut(cols).zip(g.chunks(w)) {
                    dr[*start..*end].copy_from_slice(gr);
                }
                self.accumulate(grads, *a, d);
            }
            Op::GatherRows(a, indices) => {
                let cols = node.value.cols();
                let mut d = vec![S::zero(); self.nodes[a.0].value.len()];
                for (&i, gr) in indices.iter().zip(g.chunks(cols)) {
                    for (acc, &x) in d[i * cols..(i + 1) * cols].iter_mut().zip(gr) {
                        *acc += x;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.len();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len();
                self.accumulate(grads, *a, vec![g[0] / S::from_usize_lossy(n); n]);
            }
            Op::BceWithLogits(a, targets) => {
                let d = g
                    .iter()
                    .zip(val(*a))
                    .zip(targets)
                    .map(|((&x, &z), &t)| x * (sigmoid(z) - t))
                    .collect();
                self.accumulate(grads, *a, d);
            }
        }
    }
}

pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}
