//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass as a node. Calling
//! [`Graph::backward`] walks the nodes in reverse and accumulates gradients for
//! every node that depends on a parameter or on an input marked as
//! differentiable.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::params::{ParamId, ParamStore};
use crate::rng::{rng_from_seed, Rng};
use crate::tensor::{gemm, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Swish(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Softmax(Var),
    Im2Col { x: Var, kernel: usize, dilation: usize },
    GatherRows { x: Var, idx: Vec<usize> },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    RelGather { x: Var, window: usize },
    RelScatter { x: Var, window: usize },
    SelectRows { x: Var, fill: Var, mask: Vec<bool> },
    Sum(Var),
    /// Scalar function of `x` whose gradient was computed alongside its value.
    Custom { x: Var, grad: Tensor },
}

struct Node {
    op: Op,
    value: Option<Tensor>,
    needs_grad: bool,
}

/// One forward pass. Parameters are borrowed from a [`ParamStore`].
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    dropout_rng: Option<Rng>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            dropout_rng: None,
        }
    }

    /// A graph in training mode: dropout masks are drawn from `seed`.
    pub fn training(params: &'p ParamStore, seed: u64) -> Self {
        let mut g = Self::new(params);
        g.dropout_rng = Some(rng_from_seed(seed));
        g
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    /// Inverted dropout; the identity outside training mode.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if p <= 0.0 || self.dropout_rng.is_none() {
            return a;
        }
        let (m, n) = self.value(a).shape();
        let rng = self.dropout_rng.as_mut().expect("checked above");
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..m * n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mask = self.constant(Tensor::from_vec(m, n, mask).expect("sized by construction"));
        self.mul(a, mask)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].op {
            Op::Param(id) => self.params.get(*id),
            _ => self.nodes[v.0].value.as_ref().expect("non-param nodes hold values"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t, false)
    }

    /// A leaf whose gradient is tracked (used for gradient checks on inputs).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimensions");
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, 0.0, out.data_mut());
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::MatMul(a, b), out, ng)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_nt inner dimensions");
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), true, 0.0, out.data_mut());
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::MatMulNt(a, b), out, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Add(a, b), out, ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shapes");
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Sub(a, b), out, ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes");
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Mul(a, b), out, ng)
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n), "add_row shapes");
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..m {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(Op::AddRow(a, row), out, ng)
    }

    /// Multiplies every row of `a` elementwise by a `1 × n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n), "mul_row shapes");
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..m {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r) {
                *o *= b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(Op::MulRow(a, row), out, ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(Op::Scale(a, s), out, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let ng = self.ng(a);
        self.push(Op::Relu(a), out, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(Op::Sigmoid(a), out, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(libm::tanh);
        let ng = self.ng(a);
        self.push(Op::Tanh(a), out, ng)
    }

    /// `x · sigmoid(x)`.
    pub fn swish(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * sigmoid(x));
        let ng = self.ng(a);
        self.push(Op::Swish(a), out, ng)
    }

    /// Per-row standardization (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let (m, n) = x.shape();
        let mut out = Tensor::zeros(m, n);
        let mut inv_std = Vec::with_capacity(m);
        for i in 0..m {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / libm::sqrt(var + eps);
            for (o, v) in out.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let ng = self.ng(a);
        self.push(Op::LayerNorm { x: a, inv_std }, out, ng)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (m, n) = x.shape();
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            let row = x.row(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let o = out.row_mut(i);
            let mut s = 0.0;
            for (o, v) in o.iter_mut().zip(row) {
                *o = libm::exp(v - mx);
                s += *o;
            }
            for o in o.iter_mut() {
                *o /= s;
            }
        }
        let ng = self.ng(a);
        self.push(Op::Softmax(a), out, ng)
    }

    /// Unfolds a `T × C` sequence into `T × (kernel·C)` windows with zero
    /// padding so a following matmul is a same-length 1D convolution.
    pub fn im2col(&mut self, a: Var, kernel: usize, dilation: usize) -> Var {
        let x = self.value(a);
        let (t, c) = x.shape();
        let pad = (kernel - 1) / 2 * dilation;
        let mut out = Tensor::zeros(t, kernel * c);
        for r in 0..t {
            let dst = out.row_mut(r);
            for k in 0..kernel {
                let src = r as isize + (k * dilation) as isize - pad as isize;
                if src >= 0 && (src as usize) < t {
                    dst[k * c..(k + 1) * c].copy_from_slice(x.row(src as usize));
                }
            }
        }
        let ng = self.ng(a);
        self.push(Op::Im2Col { x: a, kernel, dilation }, out, ng)
    }

    /// Row `i` of the result is row `idx[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let x = self.value(a);
        let n = x.cols();
        let mut out = Tensor::zeros(idx.len(), n);
        for (i, &j) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(x.row(j));
        }
        let ng = self.ng(a);
        self.push(Op::GatherRows { x: a, idx }, out, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let m = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p).1).collect();
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros(m, total);
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let x = self.value(p);
            assert_eq!(x.rows(), m, "concat_cols rows");
            for i in 0..m {
                out.row_mut(i)[off..off + w].copy_from_slice(x.row(i));
            }
            off += w;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Op::ConcatCols(parts.to_vec()), out, ng)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        let m = x.rows();
        let mut out = Tensor::zeros(m, end - start);
        for i in 0..m {
            out.row_mut(i).copy_from_slice(&x.row(i)[start..end]);
        }
        let ng = self.ng(a);
        self.push(Op::SliceCols { x: a, start }, out, ng)
    }

    /// Expands per-offset scores `m × (2w+1)` into an `m × m` matrix where
    /// entry `(i, j)` reads offset `clamp(j - i, -w, w)`.
    pub fn rel_gather(&mut self, a: Var, window: usize) -> Var {
        let x = self.value(a);
        let m = x.rows();
        assert_eq!(x.cols(), 2 * window + 1, "rel_gather width");
        let mut out = Tensor::zeros(m, m);
        for i in 0..m {
            let src = x.row(i);
            let dst = out.row_mut(i);
            for (j, d) in dst.iter_mut().enumerate() {
                *d = src[rel_bucket(i, j, window)];
            }
        }
        let ng = self.ng(a);
        self.push(Op::RelGather { x: a, window }, out, ng)
    }

    /// Adjoint of [`Graph::rel_gather`]: sums an `m × m` matrix into offset
    /// buckets `m × (2w+1)`.
    pub fn rel_scatter(&mut self, a: Var, window: usize) -> Var {
        let x = self.value(a);
        let m = x.rows();
        assert_eq!(x.cols(), m, "rel_scatter expects a square matrix");
        let mut out = Tensor::zeros(m, 2 * window + 1);
        for i in 0..m {
            let src = x.row(i);
            let dst = out.row_mut(i);
            for (j, s) in src.iter().enumerate() {
                dst[rel_bucket(i, j, window)] += s;
            }
        }
        let ng = self.ng(a);
        self.push(Op::RelScatter { x: a, window }, out, ng)
    }

    /// Rows flagged in `mask` are replaced by the single row `fill`.
    pub fn select_rows(&mut self, a: Var, fill: Var, mask: Vec<bool>) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(mask.len(), m, "select_rows mask length");
        assert_eq!(self.shape(fill), (1, n), "select_rows fill shape");
        let mut out = self.value(a).clone();
        let f = self.value(fill).data().to_vec();
        for (i, &on) in mask.iter().enumerate() {
            if on {
                out.row_mut(i).copy_from_slice(&f);
            }
        }
        let ng = self.ng(a) || self.ng(fill);
        self.push(Op::SelectRows { x: a, fill, mask }, out, ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.ng(a);
        self.push(Op::Sum(a), Tensor::filled(1, 1, s), ng)
    }

    /// Records a scalar-valued function of `a` whose gradient with respect to
    /// `a` is already known.
    pub fn custom_scalar(&mut self, a: Var, value: f64, grad: Tensor) -> Var {
        assert_eq!(grad.shape(), self.shape(a), "custom gradient shape");
        let ng = self.ng(a);
        self.push(Op::Custom { x: a, grad }, Tensor::filled(1, 1, value), ng)
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.shape(), (1, 1), "scalar() on a non-scalar node");
        t.data()[0]
    }

    /// Backpropagates from the scalar node `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::filled(1, 1, 1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = self.nodes[i].value.as_ref();
        match &self.nodes[i].op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = self.shape(*b).1;
                if self.ng(*a) {
                    let ga = acc(grads, *a, m, k);
                    gemm(m, n, k, g.data(), false, self.value(*b).data(), true, 1.0, ga.data_mut());
                }
                if self.ng(*b) {
                    let gb = acc(grads, *b, k, n);
                    gemm(k, m, n, self.value(*a).data(), true, g.data(), false, 1.0, gb.data_mut());
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.shape(*a);
                let n = self.shape(*b).0;
                if self.ng(*a) {
                    let ga = acc(grads, *a, m, k);
                    gemm(m, n, k, g.data(), false, self.value(*b).data(), false, 1.0, ga.data_mut());
                }
                if self.ng(*b) {
                    let gb = acc(grads, *b, n, k);
                    gemm(n, m, k, g.data(), true, self.value(*a).data(), false, 1.0, gb.data_mut());
                }
            }
            Op::Add(a, b) => {
                let (m, n) = g.shape();
                if self.ng(*a) {
                    acc(grads, *a, m, n).add_assign(g);
                }
                if self.ng(*b) {
                    acc(grads, *b, m, n).add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                let (m, n) = g.shape();
                if self.ng(*a) {
                    acc(grads, *a, m, n).add_assign(g);
                }
                if self.ng(*b) {
                    acc(grads, *b, m, n).axpy(-1.0, g);
                }
            }
            Op::Mul(a, b) => {
                let (m, n) = g.shape();
                if self.ng(*a) {
                    let prod = g.zip_map(self.value(*b), |x, y| x * y);
                    acc(grads, *a, m, n).add_assign(&prod);
                }
                if self.ng(*b) {
                    let prod = g.zip_map(self.value(*a), |x, y| x * y);
                    acc(grads, *b, m, n).add_assign(&prod);
                }
            }
            Op::AddRow(a, row) => {
                let (m, n) = g.shape();
                if self.ng(*a) {
                    acc(grads, *a, m, n).add_assign(g);
                }
                if self.ng(*row) {
                    let gr = acc(grads, *row, 1, n);
                    for r in 0..m {
                        for (o, v) in gr.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::MulRow(a, row) => {
                let (m, n) = g.shape();
                if self.ng(*a) {
                    let rv = self.value(*row).data().to_vec();
                    let ga = acc(grads, *a, m, n);
                    for r in 0..m {
                        for ((o, v), s) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(&rv) {
                            *o += v * s;
                        }
                    }
                }
                if self.ng(*row) {
                    let av = self.value(*a).clone();
                    let gr = acc(grads, *row, 1, n);
                    for r in 0..m {
                        for ((o, v), x) in gr.data_mut().iter_mut().zip(g.row(r)).zip(av.row(r)) {
                            *o += v * x;
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                let (m, n) = g.shape();
                acc(grads, *a, m, n).axpy(*s, g);
            }
            Op::Relu(a) => {
                let local = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                let (m, n) = g.shape();
                acc(grads, *a, m, n).add_assign(&local);
            }
            Op::Sigmoid(a) => {
                let y = out.expect("value");
                let local = g.zip_map(y, |gv, y| gv * y * (1.0 - y));
                let (m, n) = g.shape();
                acc(grads, *a, m, n).add_assign(&local);
            }
            Op::Tanh(a) => {
                let y = out.expect("value");
                let local = g.zip_map(y, |gv, y| gv * (1.0 - y * y));
                let (m, n) = g.shape();
                acc(grads, *a, m, n).add_assign(&local);
            }
            Op::Swish(a) => {
                let local = g.zip_map(self.value(*a), |gv, x| {
                    let s = sigmoid(x);
                    gv * (s + x * s * (1.0 - s))
                });
                let (m, n) = g.shape();
                acc(grads, *a, m, n).add_assign(&local);
            }
            Op::LayerNorm { x, inv_std } => {
                let y = out.expect("value");
                let (m, n) = g.shape();
                let ga = acc(grads, *x, m, n);
                for r in 0..m {
                    let gr = g.row(r);
                    let yr = y.row(r);
                    let mean_g = gr.iter().sum::<f64>() / n as f64;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for ((o, gv), yv) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o += inv_std[r] * (gv - mean_g - yv * mean_gy);
                    }
                }
            }
            Op::Softmax(a) => {
                let y = out.expect("value");
                let (m, n) = g.shape();
                let ga = acc(grads, *a, m, n);
                for r in 0..m {
                    let gr = g.row(r);
                    let yr = y.row(r);
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, gv), yv) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o += yv * (gv - dot);
                    }
                }
            }
            Op::Im2Col { x, kernel, dilation } => {
                let (t, c) = self.shape(*x);
                let pad = (kernel - 1) / 2 * dilation;
                let ga = acc(grads, *x, t, c);
                for r in 0..t {
                    let src = g.row(r);
                    for k in 0..*kernel {
                        let dst = r as isize + (k * dilation) as isize - pad as isize;
                        if dst >= 0 && (dst as usize) < t {
                            for (o, v) in ga.row_mut(dst as usize).iter_mut().zip(&src[k * c..(k + 1) * c]) {
                                *o += v;
                            }
                        }
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                let (m, n) = self.shape(*x);
                let ga = acc(grads, *x, m, n);
                for (i, &j) in idx.iter().enumerate() {
                    for (o, v) in ga.row_mut(j).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if self.ng(p) {
                        let gp = acc(grads, p, m, w);
                        for r in 0..m {
                            for (o, v) in gp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                *o += v;
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.shape(*x);
                let w = g.cols();
                let ga = acc(grads, *x, m, n);
                for r in 0..m {
                    for (o, v) in ga.row_mut(r)[*start..*start + w].iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
            }
            Op::RelGather { x, window } => {
                let (m, n) = self.shape(*x);
                let ga = acc(grads, *x, m, n);
                for i in 0..m {
                    for (j, v) in g.row(i).iter().enumerate() {
                        ga.row_mut(i)[rel_bucket(i, j, *window)] += v;
                    }
                }
            }
            Op::RelScatter { x, window } => {
                let (m, n) = self.shape(*x);
                let ga = acc(grads, *x, m, n);
                for i in 0..m {
                    let gr = g.row(i).to_vec();
                    for (j, o) in ga.row_mut(i).iter_mut().enumerate() {
                        *o += gr[rel_bucket(i, j, *window)];
                    }
                }
            }
            Op::SelectRows { x, fill, mask } => {
                let (m, n) = g.shape();
                if self.ng(*x) {
                    let ga = acc(grads, *x, m, n);
                    for (r, &on) in mask.iter().enumerate() {
                        if !on {
                            for (o, v) in ga.row_mut(r).iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                    }
                }
                if self.ng(*fill) {
                    let gf = acc(grads, *fill, 1, n);
                    for (r, &on) in mask.iter().enumerate() {
                        if on {
                            for (o, v) in gf.data_mut().iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let (m, n) = self.shape(*a);
                let s = g.data()[0];
                for o in acc(grads, *a, m, n).data_mut() {
                    *o += s;
                }
            }
            Op::Custom { x, grad } => {
                let (m, n) = grad.shape();
                acc(grads, *x, m, n).axpy(g.data()[0], grad);
            }
        }
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, m: usize, n: usize) -> &mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(m, n))
}

pub(crate) fn rel_bucket(i: usize, j: usize, window: usize) -> usize {
    let d = j as isize - i as isize;
    let w = window as isize;
    (d.clamp(-w, w) + w) as usize
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Adds `scale ×` every parameter gradient into `into`, indexed by parameter.
    pub fn accumulate_params(&self, graph: &Graph<'_>, scale: f64, into: &mut ParamGrads) {
        for (pid, var) in graph.param_vars.iter().enumerate() {
            let Some(var) = var else { continue };
            let Some(g) = &self.grads[var.0] else { continue };
            let slot = into.slots[pid].get_or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            slot.axpy(scale, g);
        }
    }

    pub fn param_grads(&self, graph: &Graph<'_>) -> ParamGrads {
        let mut pg = ParamGrads::new(graph.params.len());
        self.accumulate_params(graph, 1.0, &mut pg);
        pg
    }
}

/// Per-parameter gradient accumulator; `None` means exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    slots: Vec<Option<Tensor>>,
}

impl ParamGrads {
    pub fn new(n_params: usize) -> Self {
        Self {
            slots: (0..n_params).map(|_| None).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots[id.0].as_ref()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Sum of another accumulator into this one.
    pub fn merge(&mut self, other: &ParamGrads, scale: f64) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            if let Some(b) = b {
                a.get_or_insert_with(|| Tensor::zeros(b.rows(), b.cols())).axpy(scale, b);
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        libm::sqrt(
            self.slots
                .iter()
                .flatten()
                .map(|t| t.data().iter().map(|x| x * x).sum::<f64>())
                .sum(),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().flatten().all(Tensor::all_finite)
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.slots.iter_mut().flatten() {
            t.scale_in_place(s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences of `f` with respect to every entry of `x`.
    fn numeric_grad(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Tensor {
        let h = 1e-6;
        let mut g = Tensor::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&p) - f(&m)) / (2.0 * h);
        }
        g
    }

    fn assert_close(a: &Tensor, b: &Tensor, tol: f64) {
        for (x, y) in a.data().iter().zip(b.data()) {
            let denom = x.abs().max(y.abs()).max(1e-8);
            assert!((x - y).abs() / denom < tol || (x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    fn sample(rows: usize, cols: usize, seed: f64) -> Tensor {
        Tensor::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|i| ((i as f64 + seed) * 1.37).sin()).collect(),
        )
        .unwrap()
    }

    /// Builds `scalar = Σ w ⊙ op(x)` for a fixed weighting so every output
    /// entry contributes a distinct gradient.
    fn check_unary(x: Tensor, op: impl Fn(&mut Graph<'_>, Var) -> Var) {
        let store = ParamStore::new();
        let eval = |x: &Tensor| {
            let mut g = Graph::new(&store);
            let v = g.input(x.clone());
            let y = op(&mut g, v);
            let (m, n) = g.shape(y);
            let w = g.constant(sample(m, n, 0.3));
            let p = g.mul(y, w);
            let s = g.sum(p);
            (g.scalar(s), g, v, s)
        };
        let (_, graph, v, s) = eval(&x);
        let analytic = graph.backward(s).get(v).unwrap().clone();
        let numeric = numeric_grad(&x, |x| eval(x).0);
        assert_close(&analytic, &numeric, 1e-5);
    }

    #[test]
    fn unary_ops_match_finite_differences() {
        check_unary(sample(3, 4, 0.05), |g, v| g.relu(v));
        check_unary(sample(3, 4, 0.1), |g, v| g.sigmoid(v));
        check_unary(sample(3, 4, 0.2), |g, v| g.tanh(v));
        check_unary(sample(3, 4, 0.3), |g, v| g.swish(v));
        check_unary(sample(3, 5, 0.4), |g, v| g.layer_norm(v, 1e-5));
        check_unary(sample(3, 5, 0.5), |g, v| g.softmax(v));
        check_unary(sample(6, 3, 0.6), |g, v| g.im2col(v, 3, 1));
        check_unary(sample(6, 2, 0.7), |g, v| g.im2col(v, 5, 2));
        check_unary(sample(4, 3, 0.8), |g, v| g.gather_rows(v, alloc::vec![2, 0, 0, 3, 1]));
        check_unary(sample(4, 5, 0.9), |g, v| g.slice_cols(v, 1, 4));
        check_unary(sample(5, 5, 1.0), |g, v| g.rel_gather(v, 2));
        check_unary(sample(5, 5, 1.1), |g, v| g.rel_scatter(v, 2));
        check_unary(sample(3, 4, 1.2), |g, v| g.scale(v, -2.5));
    }

    #[test]
    fn binary_ops_match_finite_differences() {
        let a0 = sample(3, 4, 0.0);
        let b0 = sample(4, 2, 1.0);
        let store = ParamStore::new();
        let run = |a: &Tensor, b: &Tensor, which: u8| {
            let mut g = Graph::new(&store);
            let va = g.input(a.clone());
            let vb = g.input(b.clone());
            let y = match which {
                0 => g.matmul(va, vb),
                1 => g.matmul_nt(va, vb),
                2 => g.mul(va, vb),
                3 => g.add_row(va, vb),
                4 => g.mul_row(va, vb),
                5 => g.concat_cols(&[va, vb]),
                6 => g.sub(va, vb),
                _ => g.select_rows(va, vb, alloc::vec![true, false, true]),
            };
            let (m, n) = g.shape(y);
            let w = g.constant(sample(m, n, 2.0));
            let p = g.mul(y, w);
            let s = g.sum(p);
            (g.scalar(s), g, va, vb, s)
        };
        let cases: [(u8, Tensor, Tensor); 8] = [
            (0, a0.clone(), b0.clone()),
            (1, a0.clone(), sample(2, 4, 3.0)),
            (2, a0.clone(), sample(3, 4, 4.0)),
            (3, a0.clone(), sample(1, 4, 5.0)),
            (4, a0.clone(), sample(1, 4, 6.0)),
            (5, a0.clone(), sample(3, 2, 7.0)),
            (6, a0.clone(), sample(3, 4, 8.0)),
            (7, a0.clone(), sample(1, 4, 9.0)),
        ];
        for (which, a, b) in cases {
            let (_, graph, va, vb, s) = run(&a, &b, which);
            let grads = graph.backward(s);
            let ga = grads.get(va).unwrap().clone();
            let gb = grads.get(vb).unwrap().clone();
            assert_close(&ga, &numeric_grad(&a, |x| run(x, &b, which).0), 1e-5);
            assert_close(&gb, &numeric_grad(&b, |x| run(&a, x, which).0), 1e-5);
        }
    }

    #[test]
    fn params_are_cached_and_receive_gradients() {
        let mut store = ParamStore::new();
        let id = store.add("w", sample(2, 2, 0.0));
        let mut g = Graph::new(&store);
        let a = g.param(id);
        let b = g.param(id);
        assert_eq!(a, b);
        let y = g.mul(a, b);
        let s = g.sum(y);
        let pg = g.backward(s).param_grads(&g);
        let expect = store.get(id).map(|x| 2.0 * x);
        assert_eq!(pg.get(id).unwrap(), &expect);
    }

    #[test]
    fn constants_get_no_gradient() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let c = g.constant(sample(2, 2, 0.0));
        let x = g.input(sample(2, 2, 1.0));
        let y = g.mul(c, x);
        let s = g.sum(y);
        let grads = g.backward(s);
        assert!(grads.get(c).is_none());
        assert!(grads.get(x).is_some());
    }
}
