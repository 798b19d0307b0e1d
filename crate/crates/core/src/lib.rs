//! Core of a stutter-oriented speech editor built around a context-conditioned
//! diffusion spectrogram denoiser.
//!
//! This crate is `no_std` (it needs `alloc`) and does no IO. It holds the
//! reverse-mode autodiff tensors, every trainable network, the diffusion
//! chain, the training losses and step, the editing logic that decides which
//! frames to regenerate, and the objective metrics that work on spectrograms.
//! Waveform DSP, file formats and the command line live in the `fluentedit`
//! crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod audio;
pub mod diffusion;
pub mod error;
pub mod graph;
pub mod infer;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod textgrid;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, ParamGrads, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
pub use audio::{AudioConfig, MelNormalizer};
pub use diffusion::{make_schedule, DiffusionSchedule};
pub use nets::{FluentSpeech, ModelConfig};
pub use textgrid::{Alignment, MaskSpec, Vocabulary};
