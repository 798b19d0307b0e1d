//! Building blocks shared by the networks.

use alloc::vec::Vec;

use crate::graph::{Graph, Var};
use crate::params::{join, normal_init, xavier_init, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// `y = x·W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        Self {
            w: store.add(join(name, "weight"), xavier_init(fan_in, fan_out, rng)),
            b: store.add(join(name, "bias"), Tensor::zeros(1, fan_out)),
        }
    }

    /// A layer whose weights start at zero, so it initially outputs its bias.
    pub fn zeroed(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: store.add(join(name, "weight"), Tensor::zeros(fan_in, fan_out)),
            b: store.add(join(name, "bias"), Tensor::zeros(1, fan_out)),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

/// Same-length 1D convolution along the time axis.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
    pub dilation: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels_in: usize,
        channels_out: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut Rng,
    ) -> Self {
        Self {
            w: store.add(join(name, "weight"), xavier_init(kernel * channels_in, channels_out, rng)),
            b: store.add(join(name, "bias"), Tensor::zeros(1, channels_out)),
            kernel,
            dilation,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let cols = if self.kernel == 1 { x } else { g.im2col(x, self.kernel, self.dilation) };
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(cols, w);
        g.add_row(y, b)
    }
}

/// Layer normalization with a learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(join(name, "gain"), Tensor::filled(1, dim, 1.0)),
            bias: store.add(join(name, "bias"), Tensor::zeros(1, dim)),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let n = g.layer_norm(x, Self::EPS);
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        let y = g.mul_row(n, gain);
        g.add_row(y, bias)
    }
}

/// Learned lookup table.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, rows: usize, dim: usize, std: f64, rng: &mut Rng) -> Self {
        Self {
            table: store.add(join(name, "table"), normal_init(rows, dim, std, rng)),
        }
    }

    pub fn lookup(&self, g: &mut Graph<'_>, ids: Vec<usize>) -> Var {
        let t = g.param(self.table);
        g.gather_rows(t, ids)
    }
}

/// Multi-head self-attention with clipped relative-position keys and values
/// shared across heads.
#[derive(Debug, Clone)]
pub struct RelativeAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    rel_k: ParamId,
    rel_v: ParamId,
    heads: usize,
    window: usize,
}

impl RelativeAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, window: usize, rng: &mut Rng) -> Self {
        let dh = dim / heads;
        let std = 1.0 / libm::sqrt(dh as f64);
        Self {
            q: Linear::new(store, &join(name, "query"), dim, dim, rng),
            k: Linear::new(store, &join(name, "key"), dim, dim, rng),
            v: Linear::new(store, &join(name, "value"), dim, dim, rng),
            out: Linear::new(store, &join(name, "output"), dim, dim, rng),
            rel_k: store.add(join(name, "rel_key"), normal_init(2 * window + 1, dh, std, rng)),
            rel_v: store.add(join(name, "rel_value"), normal_init(2 * window + 1, dh, std, rng)),
            heads,
            window,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let dim = g.shape(x).1;
        let dh = dim / self.heads;
        let q = self.q.forward(g, x);
        let q = g.scale(q, 1.0 / libm::sqrt(dh as f64));
        let k = self.k.forward(g, x);
        let v = self.v.forward(g, x);
        let rk = g.param(self.rel_k);
        let rv = g.param(self.rel_v);
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (a, b) = (h * dh, (h + 1) * dh);
            let qh = g.slice_cols(q, a, b);
            let kh = g.slice_cols(k, a, b);
            let vh = g.slice_cols(v, a, b);
            let content = g.matmul_nt(qh, kh);
            let rel = g.matmul_nt(qh, rk);
            let rel = g.rel_gather(rel, self.window);
            let scores = g.add(content, rel);
            let attn = g.softmax(scores);
            let ctx = g.matmul(attn, vh);
            let buckets = g.rel_scatter(attn, self.window);
            let rel_ctx = g.matmul(buckets, rv);
            heads.push(g.add(ctx, rel_ctx));
        }
        let joined = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        self.out.forward(g, joined)
    }
}

/// Feed-forward Transformer block: self-attention and a two-layer
/// convolutional feed-forward net, each with a residual connection followed
/// by layer normalization.
#[derive(Debug, Clone)]
pub struct FftBlock {
    attn: RelativeAttention,
    norm1: LayerNorm,
    conv1: Conv1d,
    conv2: Conv1d,
    norm2: LayerNorm,
    dropout: f64,
}

pub struct FftShape {
    pub dim: usize,
    pub filter: usize,
    pub kernel: usize,
    pub heads: usize,
    pub window: usize,
    pub dropout: f64,
}

impl FftBlock {
    pub fn new(store: &mut ParamStore, name: &str, s: &FftShape, rng: &mut Rng) -> Self {
        Self {
            attn: RelativeAttention::new(store, &join(name, "attention"), s.dim, s.heads, s.window, rng),
            norm1: LayerNorm::new(store, &join(name, "norm1"), s.dim),
            conv1: Conv1d::new(store, &join(name, "conv1"), s.dim, s.filter, s.kernel, 1, rng),
            conv2: Conv1d::new(store, &join(name, "conv2"), s.filter, s.dim, s.kernel, 1, rng),
            norm2: LayerNorm::new(store, &join(name, "norm2"), s.dim),
            dropout: s.dropout,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let a = self.attn.forward(g, x);
        let a = g.dropout(a, self.dropout);
        let h = g.add(x, a);
        let h = self.norm1.forward(g, h);
        let f = self.conv1.forward(g, h);
        let f = g.relu(f);
        let f = self.conv2.forward(g, f);
        let f = g.dropout(f, self.dropout);
        let y = g.add(h, f);
        self.norm2.forward(g, y)
    }
}

/// Convolution stack (conv → ReLU → layer norm → dropout) with a linear head.
#[derive(Debug, Clone)]
pub struct ConvStack {
    layers: Vec<(Conv1d, LayerNorm)>,
    head: Linear,
    dropout: f64,
}

impl ConvStack {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels_in: usize,
        filter: usize,
        kernel: usize,
        n_layers: usize,
        out: usize,
        dropout: f64,
        rng: &mut Rng,
    ) -> Self {
        let layers = (0..n_layers)
            .map(|i| {
                let cin = if i == 0 { channels_in } else { filter };
                let lname = join(name, &alloc::format!("layers.{i}"));
                (
                    Conv1d::new(store, &join(&lname, "conv"), cin, filter, kernel, 1, rng),
                    LayerNorm::new(store, &join(&lname, "norm"), filter),
                )
            })
            .collect();
        Self {
            layers,
            head: Linear::new(store, &join(name, "head"), filter, out, rng),
            dropout,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let mut h = x;
        for (conv, norm) in &self.layers {
            h = conv.forward(g, h);
            h = g.relu(h);
            h = norm.forward(g, h);
            h = g.dropout(h, self.dropout);
        }
        self.head.forward(g, h)
    }
}
