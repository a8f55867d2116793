//! Minimal reverse-mode differentiation over whole matrices.
//!
//! Each node stores its forward value and the operation that produced it.
//! [`Tape::backward`] walks the nodes in reverse creation order and applies
//! one hand-written vector–Jacobian product per operation. Only the handful
//! of operations the attention objective needs are supported.

use alloc::vec;
use alloc::vec::Vec;

use crate::mat::{softmax_in_place, Mat};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// `a · bᵀ`
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    ConcatCols(NodeId, NodeId),
    RowSoftmax(NodeId),
    RmsNormRows(NodeId, f64),
    RowStandardize(NodeId, f64),
    Select { src: NodeId, rows: Vec<usize>, cols: Vec<usize> },
    /// Weighted BCE on logits; scalar output.
    BceWithLogits { logits: NodeId, target: Mat, pos_weight: Vec<f64>, row_weight: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by node; `None` for nodes that do not depend on a variable.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Mat> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Mat> {
        self.grads[id.0].take()
    }
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

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].value
    }

    /// Differentiable input.
    pub fn var(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, a: NodeId) -> bool {
        self.nodes[a.0].needs_grad
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        let g = self.needs(a) || self.needs(b);
        self.push(v, Op::MatMul(a, b), g)
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_t(self.value(b));
        let g = self.needs(a) || self.needs(b);
        self.push(v, Op::MatMulT(a, b), g)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).add(self.value(b));
        let g = self.needs(a) || self.needs(b);
        self.push(v, Op::Add(a, b), g)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).scale(s);
        let g = self.needs(a);
        self.push(v, Op::Scale(a, s), g)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.rows(), vb.rows(), "concat row mismatch");
        let ca = va.cols();
        let v = Mat::from_fn(va.rows(), ca + vb.cols(), |r, c| if c < ca { va[(r, c)] } else { vb[(r, c - ca)] });
        let g = self.needs(a) || self.needs(b);
        self.push(v, Op::ConcatCols(a, b), g)
    }

    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            softmax_in_place(v.row_mut(r));
        }
        let g = self.needs(a);
        self.push(v, Op::RowSoftmax(a), g)
    }

    /// `x / sqrt(mean(x²) + eps)` per row.
    pub fn rms_norm_rows(&mut self, a: NodeId, eps: f64) -> NodeId {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let inv = rms_inv(row, eps);
            row.iter_mut().for_each(|x| *x *= inv);
        }
        let g = self.needs(a);
        self.push(v, Op::RmsNormRows(a, eps), g)
    }

    /// `(x − mean) / sqrt(var + eps)` per row (population variance).
    pub fn row_standardize(&mut self, a: NodeId, eps: f64) -> NodeId {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            standardize_in_place(v.row_mut(r), eps);
        }
        let g = self.needs(a);
        self.push(v, Op::RowStandardize(a, eps), g)
    }

    pub fn select(&mut self, src: NodeId, rows: &[usize], cols: &[usize]) -> NodeId {
        let v = self.value(src).select(rows, cols);
        let g = self.needs(src);
        self.push(v, Op::Select { src, rows: rows.to_vec(), cols: cols.to_vec() }, g)
    }

    /// Scalar `Σ_r row_weight[r] · Σ_c bce(σ(x[r,c]), target[r,c]; pos_weight[r])`.
    pub fn bce_with_logits(&mut self, logits: NodeId, target: Mat, pos_weight: Vec<f64>, row_weight: Vec<f64>) -> NodeId {
        let x = self.value(logits);
        assert_eq!(x.shape(), target.shape(), "bce target shape mismatch");
        assert_eq!(pos_weight.len(), x.rows());
        assert_eq!(row_weight.len(), x.rows());
        let loss = weighted_bce_with_logits(x, &target, &pos_weight, &row_weight);
        let g = self.needs(logits);
        self.push(Mat::filled(1, 1, loss), Op::BceWithLogits { logits, target, pos_weight, row_weight }, g)
    }

    /// Reverse sweep from a scalar (1×1) root.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Mat::filled(1, 1, 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, dy.matmul_t(self.value(*b)));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, self.value(*a).t_matmul(&dy));
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, dy.matmul(self.value(*b)));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, dy.t_matmul(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, dy.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, dy.clone());
                    }
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, dy.scale(*s)),
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, Mat::from_fn(dy.rows(), ca, |r, c| dy[(r, c)]));
                    }
                    if self.needs(*b) {
                        let cb = self.value(*b).cols();
                        accumulate(&mut grads, *b, Mat::from_fn(dy.rows(), cb, |r, c| dy[(r, c + ca)]));
                    }
                }
                Op::RowSoftmax(a) => {
                    let y = &node.value;
                    let mut dx = Mat::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, dyr) = (y.row(r), dy.row(r));
                        let inner: f64 = yr.iter().zip(dyr).map(|(p, g)| p * g).sum();
                        for ((o, p), g) in dx.row_mut(r).iter_mut().zip(yr).zip(dyr) {
                            *o = p * (g - inner);
                        }
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::RmsNormRows(a, eps) => {
                    let x = self.value(*a);
                    let n = x.cols() as f64;
                    let mut dx = Mat::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        let (xr, dyr) = (x.row(r), dy.row(r));
                        let inv = rms_inv(xr, *eps);
                        let proj: f64 = xr.iter().zip(dyr).map(|(a, b)| a * b).sum::<f64>() / n;
                        let inv3 = inv * inv * inv;
                        for ((o, xv), g) in dx.row_mut(r).iter_mut().zip(xr).zip(dyr) {
                            *o = inv * g - inv3 * xv * proj;
                        }
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::RowStandardize(a, eps) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let n = x.cols() as f64;
                    let mut dx = Mat::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        let xr = x.row(r);
                        let mean = xr.iter().sum::<f64>() / n;
                        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv = 1.0 / libm::sqrt(var + eps);
                        let (yr, dyr) = (y.row(r), dy.row(r));
                        let mean_dy = dyr.iter().sum::<f64>() / n;
                        let mean_dyy = yr.iter().zip(dyr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((o, yv), g) in dx.row_mut(r).iter_mut().zip(yr).zip(dyr) {
                            *o = inv * (g - mean_dy - yv * mean_dyy);
                        }
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::Select { src, rows, cols } => {
                    let (sr, sc) = self.value(*src).shape();
                    let mut dx = Mat::zeros(sr, sc);
                    for (r, &rr) in rows.iter().enumerate() {
                        for (c, &cc) in cols.iter().enumerate() {
                            dx[(rr, cc)] += dy[(r, c)];
                        }
                    }
                    accumulate(&mut grads, *src, dx);
                }
                Op::BceWithLogits { logits, target, pos_weight, row_weight } => {
                    let x = self.value(*logits);
                    let g = dy[(0, 0)];
                    let dx = Mat::from_fn(x.rows(), x.cols(), |r, c| {
                        let rw = row_weight[r];
                        if rw == 0.0 {
                            return 0.0;
                        }
                        let s = sigmoid(x[(r, c)]);
                        let y = target[(r, c)];
                        g * rw * (pos_weight[r] * y * (s - 1.0) + (1.0 - y) * s)
                    });
                    accumulate(&mut grads, *logits, dx);
                }
            }
            grads[idx] = Some(dy);
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Mat>], id: NodeId, g: Mat) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn rms_inv(row: &[f64], eps: f64) -> f64 {
    let ms = row.iter().map(|x| x * x).sum::<f64>() / row.len() as f64;
    1.0 / libm::sqrt(ms + eps)
}

pub(crate) fn rms_norm_in_place(row: &mut [f64], eps: f64) {
    let inv = rms_inv(row, eps);
    row.iter_mut().for_each(|x| *x *= inv);
}

pub(crate) fn standardize_in_place(row: &mut [f64], eps: f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / libm::sqrt(var + eps);
    row.iter_mut().for_each(|x| *x = (*x - mean) * inv);
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `log(1 + eˣ)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

pub(crate) fn weighted_bce_with_logits(x: &Mat, target: &Mat, pos_weight: &[f64], row_weight: &[f64]) -> f64 {
    let mut total = 0.0;
    for r in 0..x.rows() {
        let rw = row_weight[r];
        if rw == 0.0 {
            continue;
        }
        let mut acc = 0.0;
        for (&v, &y) in x.row(r).iter().zip(target.row(r)) {
            // −log σ(v) = softplus(−v), −log(1−σ(v)) = softplus(v)
            acc += pos_weight[r] * y * softplus(-v) + (1.0 - y) * softplus(v);
        }
        total += rw * acc;
    }
    total
}
