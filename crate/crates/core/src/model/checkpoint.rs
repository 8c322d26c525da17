//! `SFE1` checkpoint container.
//!
//! Layout: magic `SFE1`, a little-endian `u32` header length, the JSON header
//! (config, optimizer scalars, tensor names and shapes), then every tensor as
//! little-endian `f32` in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ModelConfig, SfeParams};
use crate::error::{GaitError, Result};
use crate::numerics::{AdamConfig, AdamState, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SFE1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerHeader {
    config: AdamConfig,
    step_count: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    config: ModelConfig,
    iteration: u64,
    optimizer: Option<OptimizerHeader>,
    tensors: Vec<TensorEntry>,
}

/// Model weights plus optional optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: SfeParams<f32>,
    pub optimizer: Option<AdamState<f32>>,
    pub iteration: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let names = self.params.names();
        let mut tensors: Vec<(String, &Tensor<f32>)> =
            names.iter().cloned().zip(self.params.tensors()).collect();
        if let Some(opt) = &self.optimizer {
            if !opt.first_moment.is_empty() {
                if opt.first_moment.len() != names.len() || opt.second_moment.len() != names.len() {
                    return Err(GaitError::Shape(
                        "optimizer moments do not match parameters".into(),
                    ));
                }
                for (n, m) in names.iter().zip(&opt.first_moment) {
                    tensors.push((format!("adam.m.{n}"), m));
                }
                for (n, v) in names.iter().zip(&opt.second_moment) {
                    tensors.push((format!("adam.v.{n}"), v));
                }
            }
        }
        let header = Header {
            version: FORMAT_VERSION,
            config: self.params.config.clone(),
            iteration: self.iteration,
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                config: o.config,
                step_count: o.step_count,
            }),
            tensors: tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec_pretty(&header)?;
        let payload: usize = tensors.iter().map(|(_, t)| t.len() * 4).sum();
        let mut out = Vec::with_capacity(8 + json.len() + payload);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |r: &str| GaitError::format(origin, r.to_string());
        if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing SFE1 magic"));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let json = bytes
            .get(8..8 + hlen)
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| bad(&format!("header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {}", header.version)));
        }
        let mut params = SfeParams::<f32>::zeros(&header.config)?;
        let names = params.names();
        let n = names.len();
        let expected_tensors = if header.optimizer.is_some() && header.tensors.len() == 3 * n {
            3 * n
        } else {
            n
        };
        if header.tensors.len() != expected_tensors {
            return Err(bad(&format!(
                "expected {expected_tensors} tensors, header lists {}",
                header.tensors.len()
            )));
        }
        let mut offset = 8 + hlen;
        let mut read = |entry: &TensorEntry,
                        expect_name: &str,
                        expect_shape: &[usize]|
         -> Result<Tensor<f32>> {
            if entry.name != expect_name || entry.shape != expect_shape {
                return Err(bad(&format!(
                    "tensor `{}` {:?} where `{expect_name}` {expect_shape:?} expected",
                    entry.name, entry.shape
                )));
            }
            let len: usize = entry.shape.iter().product();
            let raw = bytes
                .get(offset..offset + 4 * len)
                .ok_or_else(|| bad("truncated payload"))?;
            offset += 4 * len;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Tensor::new(&entry.shape, data)
        };
        let shapes: Vec<Vec<usize>> = params
            .tensors()
            .iter()
            .map(|t| t.shape().to_vec())
            .collect();
        let mut loaded = Vec::with_capacity(n);
        for i in 0..n {
            loaded.push(read(&header.tensors[i], &names[i], &shapes[i])?);
        }
        for (dst, src) in params.tensors_mut().into_iter().zip(loaded) {
            *dst = src;
        }
        let optimizer = match header.optimizer {
            None => None,
            Some(h) => {
                let mut state = AdamState::new(h.config);
                state.step_count = h.step_count;
                if expected_tensors == 3 * n {
                    for i in 0..n {
                        state.first_moment.push(read(
                            &header.tensors[n + i],
                            &format!("adam.m.{}", names[i]),
                            &shapes[i],
                        )?);
                    }
                    for i in 0..n {
                        state.second_moment.push(read(
                            &header.tensors[2 * n + i],
                            &format!("adam.v.{}", names[i]),
                            &shapes[i],
                        )?);
                    }
                }
                Some(state)
            }
        };
        if offset != bytes.len() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(Checkpoint {
            params,
            optimizer,
            iteration: header.iteration,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| GaitError::io(path, e))?;
        f.write_all(&bytes).map_err(|e| GaitError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| GaitError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
