use alloc::format;
use alloc::vec::Vec;

use super::layers::{ConvStack, Linear};
use super::{ModelConfig, LOG_PITCH_CENTER};
use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::params::{join, normal_init, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Embeds known values (one scalar per row) and substitutes a learned
/// "unknown" vector on masked rows.
#[derive(Debug, Clone)]
struct MaskedValueEmbedding {
    proj: Linear,
    unknown: ParamId,
}

impl MaskedValueEmbedding {
    fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut Rng) -> Self {
        Self {
            proj: Linear::new(store, &join(name, "value_proj"), 1, dim, rng),
            unknown: store.add(join(name, "unknown"), normal_init(1, dim, 0.1, rng)),
        }
    }

    fn forward(&self, g: &mut Graph<'_>, values: &[f64], mask: &[bool]) -> Var {
        // Masked values are zeroed before use so they cannot leak in.
        let v: Vec<f64> = values.iter().zip(mask).map(|(&v, &m)| if m { 0.0 } else { v }).collect();
        let x = g.constant(Tensor::column(&v));
        let e = self.proj.forward(g, x);
        let unk = g.param(self.unknown);
        g.select_rows(e, unk, mask.to_vec())
    }
}

fn check_lengths(op: &'static str, rows: usize, values: usize, mask: usize) -> Result<()> {
    if values != rows || mask != rows {
        return Err(shape_err(op, format!("{rows} values and mask flags"), format!("{values} values, {mask} flags")));
    }
    Ok(())
}

/// Phoneme-level log-duration predictor. In its masked form the durations of
/// unmasked phonemes are embedded and concatenated to the text features.
#[derive(Debug, Clone)]
pub struct DurationPredictor {
    known: Option<MaskedValueEmbedding>,
    stack: ConvStack,
}

impl DurationPredictor {
    pub fn new(store: &mut ParamStore, name: &str, c: &ModelConfig, rng: &mut Rng) -> Self {
        let known = c
            .masked_duration
            .then(|| MaskedValueEmbedding::new(store, &join(name, "duration_embedding"), c.variance_embed_dim, rng));
        let cin = c.enc_hidden + if c.masked_duration { c.variance_embed_dim } else { 0 };
        let stack = ConvStack::new(
            store,
            name,
            cin,
            c.predictor_filter,
            c.predictor_kernel,
            c.predictor_layers,
            1,
            c.predictor_dropout,
            rng,
        );
        Self { known, stack }
    }

    pub fn is_masked(&self) -> bool {
        self.known.is_some()
    }

    /// `known_log` holds `ln(1 + d)` per phoneme; entries where `mask` is set
    /// are ignored. Returns an `n × 1` column of predicted `ln(1 + d)`.
    pub fn forward(&self, g: &mut Graph<'_>, e_p: Var, known_log: &[f64], mask: &[bool]) -> Result<Var> {
        check_lengths("masked_duration_predict", g.shape(e_p).0, known_log.len(), mask.len())?;
        let x = match &self.known {
            Some(emb) => {
                let e = emb.forward(g, known_log, mask);
                g.concat_cols(&[e_p, e])
            }
            None => e_p,
        };
        Ok(self.stack.forward(g, x))
    }
}

/// Frame-level pitch predictor over `e_t` and the masked pitch embedding.
/// Predicts `ln(1 + f0)`.
#[derive(Debug, Clone)]
pub struct PitchPredictor {
    known: MaskedValueEmbedding,
    stack: ConvStack,
}

impl PitchPredictor {
    pub fn new(store: &mut ParamStore, name: &str, c: &ModelConfig, rng: &mut Rng) -> Self {
        Self {
            known: MaskedValueEmbedding::new(store, &join(name, "pitch_embedding"), c.variance_embed_dim, rng),
            stack: ConvStack::new(
                store,
                name,
                c.cond_dim + c.variance_embed_dim,
                c.predictor_filter,
                c.predictor_kernel,
                c.predictor_layers,
                1,
                c.predictor_dropout,
                rng,
            ),
        }
    }

    /// `known_log` holds `ln(1 + f0)` per frame (0 when unvoiced).
    pub fn forward(&self, g: &mut Graph<'_>, e_t: Var, known_log: &[f64], mask: &[bool]) -> Result<Var> {
        check_lengths("masked_pitch_predict", g.shape(e_t).0, known_log.len(), mask.len())?;
        let centered: Vec<f64> = known_log
            .iter()
            .map(|&v| if v > 0.0 { v - LOG_PITCH_CENTER } else { -LOG_PITCH_CENTER })
            .collect();
        let e = self.known.forward(g, &centered, mask);
        let x = g.concat_cols(&[e_t, e]);
        let y = self.stack.forward(g, x);
        // Predict around the typical voiced level so training starts near it.
        let offset = g.constant(Tensor::filled(1, 1, LOG_PITCH_CENTER));
        Ok(g.add_row(y, offset))
    }
}

/// Convolutional frame classifier over `[e_t, e_x]`; returns `n × 2` class
/// probabilities, column 1 being "stutter".
#[derive(Debug, Clone)]
pub struct StutterPredictor {
    stack: ConvStack,
}

impl StutterPredictor {
    pub fn new(store: &mut ParamStore, name: &str, c: &ModelConfig, rng: &mut Rng) -> Self {
        Self {
            stack: ConvStack::new(
                store,
                name,
                2 * c.cond_dim,
                c.predictor_filter,
                c.predictor_kernel,
                c.stutter_layers,
                2,
                c.predictor_dropout,
                rng,
            ),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, e_t: Var, e_x: Var) -> Result<Var> {
        if g.shape(e_t).0 != g.shape(e_x).0 {
            return Err(shape_err(
                "stutter_predict",
                format!("{} frames", g.shape(e_t).0),
                format!("{}", g.shape(e_x).0),
            ));
        }
        let x = g.concat_cols(&[e_t, e_x]);
        let logits = self.stack.forward(g, x);
        Ok(g.softmax(logits))
    }
}
