use alloc::format;
use alloc::vec::Vec;

use super::layers::Embedding;
use super::ModelConfig;
use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::params::{join, normal_init, ParamId, ParamStore};
use crate::rng::Rng;

pub const PITCH_UNVOICED_BIN: usize = 0;

/// Quantizes F0 into `bins` log-spaced bins over `[fmin, fmax]`, numbered
/// from 1; unvoiced frames (`f0 <= 0`) map to bin 0.
pub fn pitch_bin(f0: f64, bins: usize, fmin: f64, fmax: f64) -> usize {
    if !(f0 > 0.0) {
        return PITCH_UNVOICED_BIN;
    }
    let pos = (libm::log(f0) - libm::log(fmin)) / (libm::log(fmax) - libm::log(fmin));
    let b = libm::floor(pos * bins as f64);
    1 + (b.max(0.0) as usize).min(bins - 1)
}

/// Lookup tables that enter the condition `c`, plus the learned vector that
/// replaces masked mel frames.
#[derive(Debug, Clone)]
pub struct ConditionBundle {
    pub speaker: Embedding,
    pub pitch: Embedding,
    pub stutter: Embedding,
    pub mask_vector: ParamId,
    bins: usize,
    fmin: f64,
    fmax: f64,
}

impl ConditionBundle {
    pub fn new(store: &mut ParamStore, name: &str, c: &ModelConfig, rng: &mut Rng) -> Self {
        let std = 1.0 / libm::sqrt(c.cond_dim as f64);
        Self {
            speaker: Embedding::new(store, &join(name, "speaker_embedding"), c.n_speakers, c.cond_dim, std, rng),
            pitch: Embedding::new(store, &join(name, "pitch_embedding"), c.pitch_bins + 1, c.cond_dim, std, rng),
            stutter: Embedding::new(store, &join(name, "stutter_embedding"), 2, c.cond_dim, std, rng),
            mask_vector: store.add(join(name, "mask_vector"), normal_init(1, c.n_mels, 0.1, rng)),
            bins: c.pitch_bins,
            fmin: c.pitch_fmin,
            fmax: c.pitch_fmax,
        }
    }

    pub fn pitch_bins(&self, f0: &[f64]) -> Vec<usize> {
        f0.iter().map(|&f| pitch_bin(f, self.bins, self.fmin, self.fmax)).collect()
    }

    /// `c = e_t + e_x̂ + e_spk + e_pitch [+ e_stutter]`.
    pub fn build(
        &self,
        g: &mut Graph<'_>,
        e_t: Var,
        e_x_masked: Var,
        speaker: usize,
        pitch_hz: &[f64],
        stutter_labels: Option<&[u8]>,
    ) -> Result<Var> {
        let n = g.shape(e_t).0;
        let check = |what: &str, got: usize| -> Result<()> {
            if got != n {
                return Err(shape_err("build_condition", format!("{n} frames"), format!("{got} {what}")));
            }
            Ok(())
        };
        check("acoustic frames", g.shape(e_x_masked).0)?;
        check("pitch values", pitch_hz.len())?;
        if let Some(l) = stutter_labels {
            check("stutter labels", l.len())?;
        }
        let table = g.param(self.speaker.table);
        let spk_rows = g.shape(table).0;
        if speaker >= spk_rows {
            return Err(crate::error::Error::OutOfRange {
                what: "speaker id",
                reason: format!("{speaker} >= {spk_rows} speakers"),
            });
        }
        let c = g.add(e_t, e_x_masked);
        let spk = self.speaker.lookup(g, alloc::vec![speaker]);
        let c = g.add_row(c, spk);
        let p = self.pitch.lookup(g, self.pitch_bins(pitch_hz));
        let mut c = g.add(c, p);
        if let Some(labels) = stutter_labels {
            let ids = labels.iter().map(|&l| usize::from(l != 0)).collect();
            let s = self.stutter.lookup(g, ids);
            c = g.add(c, s);
        }
        Ok(c)
    }
}
