//! Checkpoints: a binary container of named `f64` arrays plus a JSON
//! sidecar with every configuration needed to rebuild the model.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use fluentedit_core::optim::AdamState;
use fluentedit_core::train::TrainConfig;
use fluentedit_core::{AudioConfig, FluentSpeech, MelNormalizer, ModelConfig, Tensor, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};
use crate::io::{ensure_parent, read_json, write_json};

const MAGIC: &[u8; 8] = b"FLSPCKPT";
pub const FORMAT_VERSION: u32 = 1;
const PARAM_PREFIX: &str = "param/";
const MOMENT1_PREFIX: &str = "adam.m/";
const MOMENT2_PREFIX: &str = "adam.v/";

/// Everything about a checkpoint except the arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub step: u64,
    pub model: ModelConfig,
    pub audio: AudioConfig,
    pub normalizer: MelNormalizer,
    pub vocabulary: Vocabulary,
    pub train: TrainConfig,
    pub has_optimizer: bool,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: FluentSpeech,
    pub optimizer: Option<AdamState>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        ensure_parent(path)?;
        let mut arrays: Vec<(String, &Tensor)> = Vec::new();
        for (name, t) in self.model.params.iter() {
            arrays.push((format!("{PARAM_PREFIX}{name}"), t));
        }
        if let Some(opt) = &self.optimizer {
            for ((name, _), (m, v)) in self.model.params.iter().zip(opt.m.iter().zip(&opt.v)) {
                arrays.push((format!("{MOMENT1_PREFIX}{name}"), m));
                arrays.push((format!("{MOMENT2_PREFIX}{name}"), v));
            }
        }
        let mut bytes = Vec::new();
        write_arrays(&mut bytes, &arrays).map_err(|e| AppError::io(path, e))?;
        fs::write(path, bytes).map_err(|e| AppError::io(path, e))?;
        let mut meta = self.meta.clone();
        meta.has_optimizer = self.optimizer.is_some();
        meta.step = self.optimizer.as_ref().map_or(meta.step, |o| o.step);
        write_json(sidecar_path(path), &meta)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta: CheckpointMeta = read_json(sidecar_path(path))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(AppError::format(path, format!("unsupported checkpoint version {}", meta.format_version)));
        }
        let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
        let arrays = read_arrays(&mut bytes.as_slice()).map_err(|e| AppError::format(path, e))?;
        let mut model = FluentSpeech::new(meta.model.clone(), 0).map_err(|e| AppError::format(path, e))?;
        let mut params = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, t) in arrays {
            if let Some(n) = name.strip_prefix(PARAM_PREFIX) {
                params.push((n.to_string(), t));
            } else if name.starts_with(MOMENT1_PREFIX) {
                m.push(t);
            } else if name.starts_with(MOMENT2_PREFIX) {
                v.push(t);
            } else {
                return Err(AppError::format(path, format!("unexpected array `{name}`")));
            }
        }
        model.params.load_values(params).map_err(|e| AppError::format(path, e))?;
        let optimizer = if meta.has_optimizer {
            if m.len() != model.params.len() || v.len() != model.params.len() {
                return Err(AppError::format(path, "optimizer moments do not match the parameters"));
            }
            Some(AdamState { step: meta.step, m, v })
        } else {
            None
        };
        Ok(Self { meta, model, optimizer })
    }
}

fn write_arrays(out: &mut impl Write, arrays: &[(String, &Tensor)]) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for (name, t) in arrays {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.rows() as u32).to_le_bytes())?;
        out.write_all(&(t.cols() as u32).to_le_bytes())?;
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(input: &mut impl Read) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b).map_err(|e| format!("truncated: {e}"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_arrays(input: &mut impl Read) -> std::result::Result<Vec<(String, Tensor)>, String> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|e| format!("truncated header: {e}"))?;
    if &magic != MAGIC {
        return Err("not a checkpoint file".into());
    }
    let version = read_u32(input)?;
    if version != FORMAT_VERSION {
        return Err(format!("unsupported container version {version}"));
    }
    let n = read_u32(input)?;
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let len = read_u32(input)? as usize;
        let mut name = vec![0u8; len];
        input.read_exact(&mut name).map_err(|e| format!("truncated: {e}"))?;
        let name = String::from_utf8(name).map_err(|e| format!("bad array name: {e}"))?;
        let rows = read_u32(input)? as usize;
        let cols = read_u32(input)? as usize;
        let mut data = vec![0u8; rows * cols * 8];
        input.read_exact(&mut data).map_err(|e| format!("truncated array `{name}`: {e}"))?;
        let values = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        out.push((name, Tensor::from_vec(rows, cols, values).map_err(|e| e.to_string())?));
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest).map_err(|e| e.to_string())?;
    if !rest.is_empty() {
        return Err(format!("{} trailing bytes", rest.len()));
    }
    Ok(out)
}
