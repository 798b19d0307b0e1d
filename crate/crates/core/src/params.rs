//! Named trainable parameter storage.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameter matrices.
///
/// Insertion order is stable and is the order used by checkpoints and by the
/// optimizer, so two stores built from the same config line up index by index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of trainable scalars.
    pub fn count_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Number of scalars in parameters whose name starts with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Replaces every value, checking names and shapes line up.
    pub fn load_values(&mut self, named: Vec<(String, Tensor)>) -> Result<(), String> {
        if named.len() != self.tensors.len() {
            return Err(alloc::format!(
                "expected {} parameters, found {}",
                self.tensors.len(),
                named.len()
            ));
        }
        for (i, (name, t)) in named.into_iter().enumerate() {
            if name != self.names[i] {
                return Err(alloc::format!("parameter {i}: expected `{}`, found `{name}`", self.names[i]));
            }
            if t.shape() != self.tensors[i].shape() {
                return Err(alloc::format!(
                    "parameter `{name}`: expected shape {:?}, found {:?}",
                    self.tensors[i].shape(),
                    t.shape()
                ));
            }
            self.tensors[i] = t;
        }
        Ok(())
    }

    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect()
    }
}

/// Gaussian init with the given standard deviation.
pub fn normal_init<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    Tensor::from_vec(rows, cols, data).expect("sized by construction")
}

/// Glorot-style init for a `fan_in × fan_out` weight.
pub fn xavier_init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let std = libm::sqrt(2.0 / (fan_in + fan_out) as f64);
    normal_init(fan_in, fan_out, std, rng)
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        let mut s = String::with_capacity(prefix.len() + name.len() + 1);
        s.push_str(prefix);
        s.push('.');
        s.push_str(name);
        s
    }
}
