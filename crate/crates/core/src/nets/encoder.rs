use alloc::format;
use alloc::vec::Vec;

use super::layers::{Embedding, FftBlock, FftShape, Linear};
use super::ModelConfig;
use crate::graph::{Graph, Var};
use crate::params::{join, ParamStore};
use crate::rng::Rng;

/// Phoneme embedding followed by feed-forward Transformer blocks with
/// relative position encoding.
#[derive(Debug, Clone)]
pub struct LinguisticEncoder {
    embed: Embedding,
    blocks: Vec<FftBlock>,
}

impl LinguisticEncoder {
    pub fn new(store: &mut ParamStore, name: &str, c: &ModelConfig, rng: &mut Rng) -> Self {
        let std = 1.0 / libm::sqrt(c.phoneme_embed_dim as f64);
        let embed = Embedding::new(store, &join(name, "phoneme_embedding"), c.vocab_size, c.phoneme_embed_dim, std, rng);
        let shape = FftShape {
            dim: c.enc_hidden,
            filter: c.enc_filter,
            kernel: c.enc_conv_kernel,
            heads: c.enc_heads,
            window: c.rel_window,
            dropout: c.enc_dropout,
        };
        let blocks = (0..c.enc_layers)
            .map(|i| FftBlock::new(store, &join(name, &format!("blocks.{i}")), &shape, rng))
            .collect();
        Self { embed, blocks }
    }

    pub fn embedding_table(&self) -> crate::params::ParamId {
        self.embed.table
    }

    pub fn forward(&self, g: &mut Graph<'_>, ids: &[usize]) -> Var {
        let mut h = self.embed.lookup(g, ids.to_vec());
        for b in &self.blocks {
            h = b.forward(g, h);
        }
        h
    }
}

/// Frame-wise projection of the (masked) mel followed by feed-forward
/// Transformer blocks.
#[derive(Debug, Clone)]
pub struct AcousticEncoder {
    input: Linear,
    blocks: Vec<FftBlock>,
}

impl AcousticEncoder {
    pub fn new(store: &mut ParamStore, name: &str, c: &ModelConfig, rng: &mut Rng) -> Self {
        let input = Linear::new(store, &join(name, "input"), c.n_mels, c.cond_dim, rng);
        let shape = FftShape {
            dim: c.cond_dim,
            filter: c.acoustic_filter,
            kernel: c.enc_conv_kernel,
            heads: c.enc_heads,
            window: c.rel_window,
            dropout: c.enc_dropout,
        };
        let blocks = (0..c.acoustic_layers)
            .map(|i| FftBlock::new(store, &join(name, &format!("blocks.{i}")), &shape, rng))
            .collect();
        Self { input, blocks }
    }

    pub fn forward(&self, g: &mut Graph<'_>, mel: Var) -> Var {
        let h = self.input.forward(g, mel);
        let mut h = g.relu(h);
        for b in &self.blocks {
            h = b.forward(g, h);
        }
        h
    }
}
