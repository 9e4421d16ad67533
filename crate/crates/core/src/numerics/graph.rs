//! Define-by-run reverse-mode differentiation over dense 2-D tensors.
//!
//! Nodes are appended in evaluation order, so insertion order is a valid
//! topological order and `backward` is a single reverse sweep.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::ops::{self, clamp_prob, Mask, BCE_CLAMP};
use crate::numerics::tensor::{matmul_nt, matmul_tn, transpose};
use crate::numerics::Tensor;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    ScaleBy(NodeId, NodeId),
    Transpose(NodeId),
    Softmax(NodeId),
    LayerNorm(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Square(NodeId),
    MeanRows(NodeId),
    SumAll(NodeId),
    SliceRows(NodeId, usize),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    ShiftRows(NodeId, isize),
    RowCosine(NodeId, NodeId),
    Bce(NodeId, Arc<Vec<f64>>),
    NegLogSoftmax(NodeId, usize),
    Gather(NodeId, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    trainable: bool,
}

/// Record of a differentiable computation.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss, keyed by trainable leaf.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_leaf: BTreeMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.by_leaf.get(&id)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &Tensor)> {
        self.by_leaf.iter()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn is_trainable(&self, id: NodeId) -> bool {
        self.nodes[id.0].trainable
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, true)
    }

    fn push_leaf(&mut self, value: Tensor, trainable: bool) -> NodeId {
        let value = if value.shape().len() == 1 {
            let n = value.numel();
            Tensor::from_parts(vec![1, n], value.into_data())
        } else {
            value
        };
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: trainable,
            trainable,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            trainable: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn dims(&self, id: NodeId) -> (usize, usize) {
        let s = self.nodes[id.0].value.shape();
        (s[0], s[1])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    /// `a[r×c] + row[1×c]` broadcast over rows.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = self.row_broadcast(a, row, "add_row", |x, y| x + y)?;
        Ok(self.push(v, Op::AddRow(a, row), &[a, row]))
    }

    /// `a[r×c] ∘ row[1×c]` broadcast over rows.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = self.row_broadcast(a, row, "mul_row", |x, y| x * y)?;
        Ok(self.push(v, Op::MulRow(a, row), &[a, row]))
    }

    fn row_broadcast(&self, a: NodeId, row: NodeId, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (r, c) = self.dims(a);
        let (rr, rc) = self.dims(row);
        if rr != 1 || rc != c {
            return Err(Error::shape(op, &[r, c], &[rr, rc]));
        }
        let av = self.value(a).data();
        let rv = self.value(row).data();
        let data = av.iter().enumerate().map(|(i, &x)| f(x, rv[i % c])).collect();
        Ok(Tensor::from_parts(vec![r, c], data))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    /// Multiplies every entry of `a` by the 1×1 node `s`.
    pub fn scale_by(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = self.value(s).item()?;
        let v = self.value(a).scale(sv);
        Ok(self.push(v, Op::ScaleBy(a, s), &[a, s]))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.dims(a);
        let v = Tensor::from_parts(vec![c, r], transpose(self.value(a).data(), r, c));
        self.push(v, Op::Transpose(a), &[a])
    }

    /// Row-wise softmax; `mask` blocks positions with −∞.
    pub fn softmax(&mut self, a: NodeId, mask: Option<&Mask>) -> Result<NodeId> {
        let v = ops::masked_softmax(self.value(a), mask)?;
        Ok(self.push(v, Op::Softmax(a), &[a]))
    }

    /// Per-row standardization (no affine part).
    pub fn layer_norm(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.dims(a);
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let (mean, inv_std) = row_stats(row);
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * inv_std;
            }
        }
        self.push(Tensor::from_parts(vec![r, c], out), Op::LayerNorm(a), &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(ops::sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a), &[a])
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a), &[a])
    }

    /// Column means, `[r×c] → [1×c]`.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.dims(a);
        let x = self.value(a).data();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += x[i * c + j];
            }
        }
        out.iter_mut().for_each(|v| *v /= r as f64);
        self.push(Tensor::from_parts(vec![1, c], out), Op::MeanRows(a), &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        self.push(Tensor::from_parts(vec![1, 1], vec![s]), Op::SumAll(a), &[a])
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.dims(a);
        if len == 0 || start + len > r {
            return Err(Error::Argument(format!(
                "slice_rows {start}..{} out of {r} rows",
                start + len
            )));
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        Ok(self.push(Tensor::from_parts(vec![len, c], data), Op::SliceRows(a, start), &[a]))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let c = self.first_dims(parts)?.1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pc != c {
                return Err(Error::shape("concat_rows", &[rows, c], &[pr, pc]));
            }
            rows += pr;
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows, c], data),
            Op::ConcatRows(parts.to_vec()),
            parts,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let r = self.first_dims(parts)?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pr != r {
                return Err(Error::shape("concat_cols", &[r], &[pr, pc]));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![r, total], data),
            Op::ConcatCols(parts.to_vec()),
            parts,
        ))
    }

    fn first_dims(&self, parts: &[NodeId]) -> Result<(usize, usize)> {
        parts
            .first()
            .map(|&p| self.dims(p))
            .ok_or_else(|| Error::Argument("concat of zero parts".into()))
    }

    /// Row `i` of the output is row `i + offset` of the input, or zeros past either end.
    pub fn shift_rows(&mut self, a: NodeId, offset: isize) -> NodeId {
        let (r, c) = self.dims(a);
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let src = i as isize + offset;
            if (0..r as isize).contains(&src) {
                let s = src as usize;
                out[i * c..(i + 1) * c].copy_from_slice(&x[s * c..(s + 1) * c]);
            }
        }
        self.push(Tensor::from_parts(vec![r, c], out), Op::ShiftRows(a, offset), &[a])
    }

    /// Cosine of every row of `a[r×c]` with `b[1×c]`, giving `[r×1]`.
    /// Rows (or `b`) with zero norm yield 0.
    pub fn row_cosine(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims(a);
        let (br, bc) = self.dims(b);
        if br != 1 || bc != c {
            return Err(Error::shape("row_cosine", &[r, c], &[br, bc]));
        }
        let av = self.value(a);
        let bv = self.value(b).data();
        let nb = ops::norm(bv);
        let out = (0..r)
            .map(|i| {
                let row = av.row_slice(i);
                let na = ops::norm(row);
                if na == 0.0 || nb == 0.0 {
                    0.0
                } else {
                    ops::dot(row, bv) / (na * nb)
                }
            })
            .collect();
        Ok(self.push(Tensor::from_parts(vec![r, 1], out), Op::RowCosine(a, b), &[a, b]))
    }

    /// Summed binary cross-entropy of clamped predictions against 0/1 labels.
    pub fn bce(&mut self, pred: NodeId, labels: &[f64]) -> Result<NodeId> {
        let p = self.value(pred).data();
        if p.len() != labels.len() {
            return Err(Error::shape("bce", self.value(pred).shape(), &[labels.len()]));
        }
        let loss = ops::binary_cross_entropy(p, labels)?;
        Ok(self.push(
            Tensor::from_parts(vec![1, 1], vec![loss]),
            Op::Bce(pred, Arc::new(labels.to_vec())),
            &[pred],
        ))
    }

    /// `log Σ exp(x) − x[index]` over all entries of `a`.
    pub fn neg_log_softmax(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let x = self.value(a).data();
        if index >= x.len() {
            return Err(Error::Argument(format!(
                "neg_log_softmax index {index} out of {}",
                x.len()
            )));
        }
        let loss = ops::log_sum_exp(x) - x[index];
        Ok(self.push(
            Tensor::from_parts(vec![1, 1], vec![loss]),
            Op::NegLogSoftmax(a, index),
            &[a],
        ))
    }

    /// Picks flat entries of `a` into a column.
    pub fn gather(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let x = self.value(a).data();
        if indices.is_empty() {
            return Err(Error::Argument("gather of zero indices".into()));
        }
        let out = indices
            .iter()
            .map(|&i| {
                x.get(i)
                    .copied()
                    .ok_or_else(|| Error::Argument(format!("gather index {i} out of {}", x.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.push(
            Tensor::from_parts(vec![indices.len(), 1], out),
            Op::Gather(a, indices.to_vec()),
            &[a],
        ))
    }

    /// Exact reverse-mode gradients of scalar `loss` for every trainable leaf.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Rank {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || node.trainable {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }

        let mut by_leaf = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.trainable {
                let g = grads
                    .get_mut(idx)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                by_leaf.insert(NodeId(idx), Tensor::from_parts(node.value.shape().to_vec(), g));
            }
        }
        Ok(Gradients { by_leaf })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, delta: Vec<f64>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => existing.iter_mut().zip(delta).for_each(|(e, d)| *e += d),
            slot @ None => *slot = Some(delta),
        }
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if self.wants(*a) {
                    let da = matmul_nt(g, self.value(*b).data(), m, n, k);
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    let db = matmul_tn(self.value(*a).data(), g, m, k, n);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.iter().zip(av).map(|(g, a)| g * a).collect());
                }
            }
            Op::AddRow(a, row) => {
                let c = self.dims(*a).1;
                self.accumulate(grads, *a, g.to_vec());
                if self.wants(*row) {
                    self.accumulate(grads, *row, column_sums(g, c));
                }
            }
            Op::MulRow(a, row) => {
                let c = self.dims(*a).1;
                let av = self.value(*a).data();
                let rv = self.value(*row).data();
                if self.wants(*a) {
                    let da = g.iter().enumerate().map(|(i, gv)| gv * rv[i % c]).collect();
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*row) {
                    let prod: Vec<f64> = g.iter().zip(av).map(|(g, a)| g * a).collect();
                    self.accumulate(grads, *row, column_sums(&prod, c));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.iter().map(|v| v * s).collect()),
            Op::ScaleBy(a, s) => {
                let sv = self.value(*s).data()[0];
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.iter().map(|v| v * sv).collect());
                }
                if self.wants(*s) {
                    let ds = g.iter().zip(self.value(*a).data()).map(|(g, a)| g * a).sum();
                    self.accumulate(grads, *s, vec![ds]);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.dims(*a);
                self.accumulate(grads, *a, transpose(g, c, r));
            }
            Op::Softmax(a) => {
                let (r, c) = self.dims(*a);
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let yr = &y[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let inner = ops::dot(yr, gr);
                    for j in 0..c {
                        dx[i * c + j] = yr[j] * (gr[j] - inner);
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::LayerNorm(a) => {
                let (r, c) = self.dims(*a);
                let x = self.value(*a).data();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let (_, inv_std) = row_stats(&x[i * c..(i + 1) * c]);
                    let yr = &y[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let g_mean = gr.iter().sum::<f64>() / c as f64;
                    let gy_mean = ops::dot(gr, yr) / c as f64;
                    for j in 0..c {
                        dx[i * c + j] = inv_std * (gr[j] - g_mean - yr[j] * gy_mean);
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let dx = g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(grads, *a, dx);
            }
            Op::Sigmoid(a) => {
                let dx = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.accumulate(grads, *a, dx);
            }
            Op::Tanh(a) => {
                let dx = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                self.accumulate(grads, *a, dx);
            }
            Op::Exp(a) => {
                let dx = g.iter().zip(y).map(|(g, y)| g * y).collect();
                self.accumulate(grads, *a, dx);
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                let dx = g.iter().zip(x).map(|(g, x)| 2.0 * g * x).collect();
                self.accumulate(grads, *a, dx);
            }
            Op::MeanRows(a) => {
                let (r, c) = self.dims(*a);
                let dx = (0..r * c).map(|i| g[i % c] / r as f64).collect();
                self.accumulate(grads, *a, dx);
            }
            Op::SumAll(a) => {
                let n = self.value(*a).numel();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::SliceRows(a, start) => {
                let (r, c) = self.dims(*a);
                let mut dx = vec![0.0; r * c];
                dx[start * c..start * c + g.len()].copy_from_slice(g);
                self.accumulate(grads, *a, dx);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if self.wants(p) {
                        self.accumulate(grads, p, g[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = (node.value.shape()[0], node.value.shape()[1]);
                let mut col = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    if self.wants(p) {
                        let mut dp = Vec::with_capacity(r * w);
                        for i in 0..r {
                            dp.extend_from_slice(&g[i * total + col..i * total + col + w]);
                        }
                        self.accumulate(grads, p, dp);
                    }
                    col += w;
                }
            }
            Op::ShiftRows(a, offset) => {
                let (r, c) = self.dims(*a);
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let src = i as isize + offset;
                    if (0..r as isize).contains(&src) {
                        let s = src as usize;
                        for j in 0..c {
                            dx[s * c + j] += g[i * c + j];
                        }
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::RowCosine(a, b) => {
                let (r, c) = self.dims(*a);
                let av = self.value(*a);
                let bv = self.value(*b).data();
                let nb = ops::norm(bv);
                let mut da = vec![0.0; r * c];
                let mut db = vec![0.0; c];
                for i in 0..r {
                    let row = av.row_slice(i);
                    let na = ops::norm(row);
                    if na == 0.0 || nb == 0.0 || g[i] == 0.0 {
                        continue;
                    }
                    let cos = y[i];
                    for j in 0..c {
                        da[i * c + j] = g[i] * (bv[j] / (na * nb) - cos * row[j] / (na * na));
                        db[j] += g[i] * (row[j] / (na * nb) - cos * bv[j] / (nb * nb));
                    }
                }
                if self.wants(*a) {
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Bce(pred, labels) => {
                let p = self.value(*pred).data();
                let dx = p
                    .iter()
                    .zip(labels.iter())
                    .map(|(&p, &f)| {
                        if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                            return 0.0;
                        }
                        let p = clamp_prob(p);
                        g[0] * (-f / p + (1.0 - f) / (1.0 - p))
                    })
                    .collect();
                self.accumulate(grads, *pred, dx);
            }
            Op::NegLogSoftmax(a, index) => {
                let x = self.value(*a).data();
                let lse = ops::log_sum_exp(x);
                let mut dx: Vec<f64> = x.iter().map(|v| g[0] * (v - lse).exp()).collect();
                dx[*index] -= g[0];
                self.accumulate(grads, *a, dx);
            }
            Op::Gather(a, indices) => {
                let mut dx = vec![0.0; self.value(*a).numel()];
                for (k, &i) in indices.iter().enumerate() {
                    dx[i] += g[k];
                }
                self.accumulate(grads, *a, dx);
            }
        }
    }
}

fn row_stats(row: &[f64]) -> (f64, f64) {
    let c = row.len() as f64;
    let mean = row.iter().sum::<f64>() / c;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

fn column_sums(g: &[f64], c: usize) -> Vec<f64> {
    let mut out = vec![0.0; c];
    for (i, v) in g.iter().enumerate() {
        out[i % c] += v;
    }
    out
}
