//! Self-describing checkpoint container.
//!
//! Layout: `b"LSCK"`, format version (`u32` LE), JSON header length (`u64`
//! LE), the JSON header, then the raw little-endian `f64` tensor payload.
//! The header lists every tensor's name, dtype, shape and byte offset into
//! the payload, plus a free-form config block.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::losses::{ArcFaceHead, ClassCenters};
use super::network::{Encoder, ProjectionHead};
use super::nn::{BatchNorm, Dense};
use super::trainer::{MetricModel, TrainConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LSCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn from_matrix(m: &Array2<f64>) -> Self {
        Self {
            shape: m.shape().to_vec(),
            data: m.iter().copied().collect(),
        }
    }

    pub fn from_vector(v: &Array1<f64>) -> Self {
        Self {
            shape: vec![v.len()],
            data: v.to_vec(),
        }
    }

    fn matrix(&self, name: &str) -> Result<Array2<f64>> {
        match self.shape.as_slice() {
            [r, c] => Array2::from_shape_vec((*r, *c), self.data.clone())
                .map_err(|e| Error::Checkpoint(format!("{name}: {e}"))),
            other => Err(Error::Checkpoint(format!("{name}: expected 2-d tensor, shape {other:?}"))),
        }
    }

    fn vector(&self, name: &str) -> Result<Array1<f64>> {
        match self.shape.as_slice() {
            [_] => Ok(Array1::from(self.data.clone())),
            other => Err(Error::Checkpoint(format!("{name}: expected 1-d tensor, shape {other:?}"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Value,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let expected: usize = t.shape.iter().product();
            if expected != t.data.len() {
                return Err(Error::Checkpoint(format!("{name}: shape does not match data length")));
            }
            entries.push(TensorEntry {
                name: name.clone(),
                dtype: "f64".into(),
                shape: t.shape.clone(),
                offset,
            });
            offset += 8 * t.data.len() as u64;
        }
        let header = serde_json::to_vec(&Header {
            format_version: VERSION,
            config: self.config.clone(),
            tensors: entries,
        })
        .map_err(|e| Error::Checkpoint(e.to_string()))?;

        let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let payload_start = 16usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let header: Header =
            serde_json::from_slice(&bytes[16..payload_start]).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let payload = &bytes[payload_start..];
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            if e.dtype != "f64" {
                return Err(Error::Checkpoint(format!("{}: unsupported dtype {}", e.name, e.dtype)));
            }
            let count: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 8 * count;
            let raw = payload
                .get(start..end)
                .ok_or_else(|| Error::Checkpoint(format!("{}: payload out of range", e.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.insert(e.name, Tensor { shape: e.shape, data });
        }
        Ok(Self {
            config: header.config,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    fn take(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelScalars {
    classes: Vec<String>,
    arcface_scale: f64,
    arcface_margin: f64,
    center_lr: f64,
    dropout: f64,
    norm_momentum: f64,
    norm_eps: f64,
    encoder_layers: usize,
}

fn put_dense(t: &mut BTreeMap<String, Tensor>, prefix: &str, d: &Dense) {
    t.insert(format!("{prefix}.weight"), Tensor::from_matrix(&d.weight));
    t.insert(format!("{prefix}.bias"), Tensor::from_vector(&d.bias));
}

fn get_dense(c: &Checkpoint, prefix: &str) -> Result<Dense> {
    let w = format!("{prefix}.weight");
    let b = format!("{prefix}.bias");
    Ok(Dense {
        weight: c.take(&w)?.matrix(&w)?,
        bias: c.take(&b)?.vector(&b)?,
    })
}

/// Packs a trained model and its training configuration.
pub fn model_checkpoint(model: &MetricModel, config: &TrainConfig) -> Result<Checkpoint> {
    let mut t = BTreeMap::new();
    for (i, layer) in model.encoder.layers.iter().enumerate() {
        put_dense(&mut t, &format!("encoder.{i}"), layer);
    }
    let p = &model.projection;
    put_dense(&mut t, "projection.hidden", &p.hidden);
    put_dense(&mut t, "projection.output", &p.output);
    t.insert("projection.norm.gamma".into(), Tensor::from_vector(&p.norm.gamma));
    t.insert("projection.norm.beta".into(), Tensor::from_vector(&p.norm.beta));
    t.insert("projection.norm.running_mean".into(), Tensor::from_vector(&p.norm.running_mean));
    t.insert("projection.norm.running_var".into(), Tensor::from_vector(&p.norm.running_var));
    t.insert("arcface.weights".into(), Tensor::from_matrix(&model.arcface.weights));
    t.insert("centers".into(), Tensor::from_matrix(&model.centers.centers));

    let scalars = ModelScalars {
        classes: model.classes.clone(),
        arcface_scale: model.arcface.scale,
        arcface_margin: model.arcface.margin,
        center_lr: model.centers.lr,
        dropout: p.dropout,
        norm_momentum: p.norm.momentum,
        norm_eps: p.norm.eps,
        encoder_layers: model.encoder.layers.len(),
    };
    let config = serde_json::json!({
        "format_version": VERSION,
        "rng_seed": config.rng_seed,
        "train": serde_json::to_value(config).map_err(|e| Error::Checkpoint(e.to_string()))?,
        "model": serde_json::to_value(scalars).map_err(|e| Error::Checkpoint(e.to_string()))?,
    });
    Ok(Checkpoint { config, tensors: t })
}

pub fn model_from_checkpoint(c: &Checkpoint) -> Result<(MetricModel, TrainConfig)> {
    let scalars: ModelScalars = serde_json::from_value(c.config["model"].clone())
        .map_err(|e| Error::Checkpoint(format!("model block: {e}")))?;
    let train: TrainConfig = serde_json::from_value(c.config["train"].clone())
        .map_err(|e| Error::Checkpoint(format!("train block: {e}")))?;
    let layers = (0..scalars.encoder_layers)
        .map(|i| get_dense(c, &format!("encoder.{i}")))
        .collect::<Result<Vec<_>>>()?;
    let vec = |name: &str| c.take(name).and_then(|t| t.vector(name));
    let norm = BatchNorm {
        gamma: vec("projection.norm.gamma")?,
        beta: vec("projection.norm.beta")?,
        running_mean: vec("projection.norm.running_mean")?,
        running_var: vec("projection.norm.running_var")?,
        momentum: scalars.norm_momentum,
        eps: scalars.norm_eps,
    };
    let model = MetricModel {
        encoder: Encoder { layers },
        projection: ProjectionHead {
            hidden: get_dense(c, "projection.hidden")?,
            norm,
            output: get_dense(c, "projection.output")?,
            dropout: scalars.dropout,
        },
        arcface: ArcFaceHead {
            weights: c.take("arcface.weights")?.matrix("arcface.weights")?,
            scale: scalars.arcface_scale,
            margin: scalars.arcface_margin,
        },
        centers: ClassCenters {
            centers: c.take("centers")?.matrix("centers")?,
            lr: scalars.center_lr,
        },
        classes: scalars.classes,
    };
    Ok((model, train))
}
