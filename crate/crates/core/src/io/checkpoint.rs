//! Versioned binary container for parameters, optimizer state and configs.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic "AHDRCKPT" | version u32 | header_len u32 | header JSON
//! | tensor payloads (table order) | moment payloads (first, second per entry)
//! | crc32 u32 over all preceding bytes
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ahdr_tensor::{Shape, Tensor};
use serde::{Deserialize, Serialize};

use super::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::network::{NetConfig, NetworkParams};
use crate::train::{AdamState, Moments, TrainConfig};

pub const MAGIC: &[u8; 8] = b"AHDRCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub train_config: TrainConfig,
    /// Completed optimization steps.
    pub iteration: u64,
    pub params: NetworkParams<f32>,
    pub adam: AdamState<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TableEntry {
    name: String,
    dtype: String,
    shape: [usize; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    net_config: NetConfig,
    train_config: TrainConfig,
    iteration: u64,
    adam_step: u64,
    tensors: Vec<TableEntry>,
    moments: Vec<TableEntry>,
}

fn entry(name: &str, t: &Tensor<f32>) -> TableEntry {
    TableEntry {
        name: name.to_string(),
        dtype: "f32".into(),
        shape: t.shape().dims(),
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Payload<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Payload<'_> {
    fn tensor(&mut self, e: &TableEntry) -> Result<Tensor<f32>> {
        if e.dtype != "f32" {
            return Err(corrupt(format!("tensor `{}` has unsupported dtype `{}`", e.name, e.dtype)));
        }
        let shape = Shape::new(e.shape[0], e.shape[1], e.shape[2], e.shape[3]);
        let len = shape.numel() * 4;
        let raw = self
            .bytes
            .get(self.pos..self.pos + len)
            .ok_or_else(|| corrupt(format!("payload truncated in `{}`", e.name)))?;
        self.pos += len;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Tensor::new(shape, data)?)
    }
}

impl Checkpoint {
    pub fn net_config(&self) -> &NetConfig {
        &self.params.config
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let named = self.params.named_tensors();
        let header = Header {
            net_config: self.params.config,
            train_config: self.train_config,
            iteration: self.iteration,
            adam_step: self.adam.step,
            tensors: named.iter().map(|(n, t)| entry(n, t)).collect(),
            moments: self.adam.moments.iter().map(|m| entry(&m.name, &m.first)).collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| corrupt(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |t: &Tensor<f32>| {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (_, t) in &named {
            put(t);
        }
        for m in &self.adam.moments {
            put(&m.first);
            put(&m.second);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    /// Decodes a checkpoint against the configuration stored in it.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Self::decode_impl(bytes, None)
    }

    /// Decodes a checkpoint whose tensors must match `expected` exactly.
    pub fn decode_for(bytes: &[u8], expected: &NetConfig) -> Result<Self> {
        Self::decode_impl(bytes, Some(expected))
    }

    fn decode_impl(bytes: &[u8], expected: Option<&NetConfig>) -> Result<Self> {
        if bytes.len() < 20 {
            return Err(corrupt(format!("file too short ({} bytes)", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic; not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version} (expected {VERSION})")));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(corrupt(format!("checksum mismatch (stored {stored:08x}, computed {actual:08x})")));
        }
        let hlen = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
        let hjson = body
            .get(16..16 + hlen)
            .ok_or_else(|| corrupt("header extends past end of file"))?;
        let header: Header = serde_json::from_slice(hjson).map_err(|e| corrupt(format!("header: {e}")))?;

        let cfg = expected.copied().unwrap_or(header.net_config);
        let mut params = NetworkParams::<f32>::zeros(&cfg)?;
        let required = params.tensor_names();
        check_structure(&required, &header.tensors)?;
        let moment_names: Vec<String> = header.moments.iter().map(|m| m.name.clone()).collect();
        if moment_names != required {
            return Err(corrupt("optimizer table does not match the parameter table"));
        }

        let mut payload = Payload {
            bytes: body,
            pos: 16 + hlen,
        };
        let mut loaded = BTreeMap::new();
        for e in &header.tensors {
            loaded.insert(e.name.clone(), payload.tensor(e)?);
        }
        let mut moments = Vec::with_capacity(header.moments.len());
        for e in &header.moments {
            let first = payload.tensor(e)?;
            let second = payload.tensor(e)?;
            moments.push(Moments {
                name: e.name.clone(),
                first,
                second,
            });
        }
        if payload.pos != body.len() {
            return Err(corrupt(format!("{} unexpected trailing bytes", body.len() - payload.pos)));
        }

        let mut shape_err = None;
        params.for_each_tensor_mut(|name, t| {
            let src = loaded.remove(&name).expect("structure checked");
            if src.shape() != t.shape() {
                shape_err.get_or_insert(format!("tensor `{name}` has shape {}, expected {}", src.shape(), t.shape()));
            }
            *t = src;
        });
        if let Some(m) = shape_err {
            return Err(corrupt(m));
        }
        for (m, (_, p)) in moments.iter().zip(params.named_tensors()) {
            if m.first.shape() != p.shape() {
                return Err(corrupt(format!("moment `{}` shape does not match its parameter", m.name)));
            }
        }
        Ok(Checkpoint {
            train_config: header.train_config,
            iteration: header.iteration,
            params,
            adam: AdamState {
                step: header.adam_step,
                moments,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?).map_err(|e| with_path(e, path))
    }

    pub fn load_for(path: &Path, expected: &NetConfig) -> Result<Self> {
        Self::decode_for(&read_file(path)?, expected).map_err(|e| with_path(e, path))
    }
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn check_structure(required: &[String], table: &[TableEntry]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for e in table {
        if !seen.insert(e.name.as_str()) {
            return Err(corrupt(format!("tensor `{}` appears more than once", e.name)));
        }
    }
    let want: BTreeSet<&str> = required.iter().map(String::as_str).collect();
    let missing: Vec<String> = required
        .iter()
        .filter(|n| !seen.contains(n.as_str()))
        .cloned()
        .collect();
    let extra: Vec<String> = table
        .iter()
        .filter(|e| !want.contains(e.name.as_str()))
        .map(|e| e.name.clone())
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::StructuralMismatch { missing, extra });
    }
    Ok(())
}
