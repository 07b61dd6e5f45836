//! Checkpoint archive: a text preamble, a TOML header, then named
//! little-endian f32 tensors (parameters, buffers, then Adam moments).

use std::fs;
use std::path::Path;

use dualtrace_tensor::optim::Adam;
use dualtrace_tensor::{ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

pub const SCHEMA_VERSION: u32 = 1;
const MAGIC: &str = "DTCKPT\n";
const MOMENT_M: &str = "adam.m.";
const MOMENT_V: &str = "adam.v.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub schema_version: u32,
    pub step: u64,
    pub epoch: u64,
    pub seed: u64,
    pub adam_steps: u64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub model: ModelConfig,
}

/// A model with its weights and (optionally) optimizer state.
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Model,
    pub store: ParamStore<f32>,
    pub adam: Adam<f32>,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(header: &CheckpointHeader, store: &ParamStore<f32>, adam: &Adam<f32>) -> Vec<u8> {
    let head = toml::to_string(header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC.as_bytes());
    out.extend_from_slice(format!("header_bytes {}\n", head.len()).as_bytes());
    out.extend_from_slice(head.as_bytes());
    for (_, p) in store.iter() {
        put_tensor(&mut out, &p.name, &p.value);
    }
    for (id, p) in store.iter() {
        if let Some((m, v)) = adam.moments(id) {
            put_tensor(&mut out, &format!("{MOMENT_M}{}", p.name), m);
            put_tensor(&mut out, &format!("{MOMENT_V}{}", p.name), v);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.buf[self.pos..];
        let n = rest.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Checkpoint("missing preamble".into()))?;
        let s = std::str::from_utf8(self.take(n + 1)?).map_err(|_| Error::Checkpoint("preamble is not UTF-8".into()))?;
        Ok(&s[..n])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>)> {
        let n = self.u32()? as usize;
        let name = String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = self.u32()? as usize;
        let shape = (0..ndim).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let bytes = self.take(numel.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        Ok((name, Tensor::from_vec(&shape, data)?))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.line()? != MAGIC.trim_end() {
        return Err(Error::Checkpoint("not a checkpoint archive".into()));
    }
    let len: usize = r
        .line()?
        .strip_prefix("header_bytes ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Checkpoint("bad header length".into()))?;
    let head = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    #[derive(Deserialize)]
    struct Version {
        schema_version: u32,
    }
    let v: Version = toml::from_str(head).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if v.schema_version != SCHEMA_VERSION {
        return Err(Error::SchemaVersionMismatch { found: v.schema_version, expected: SCHEMA_VERSION });
    }
    let header: CheckpointHeader = toml::from_str(head).map_err(|e| Error::Checkpoint(e.to_string()))?;

    // architecture from the header; values overwritten below
    let mut store = ParamStore::new();
    let model = Model::new(&header.model, &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut seen = vec![false; store.len()];
    let mut moments: Vec<(dualtrace_tensor::ParamId, Option<Tensor<f32>>, Option<Tensor<f32>>)> = Vec::new();
    while r.pos < bytes.len() {
        let (name, t) = r.tensor()?;
        let (target, slot) = if let Some(n) = name.strip_prefix(MOMENT_M) {
            (n, 1)
        } else if let Some(n) = name.strip_prefix(MOMENT_V) {
            (n, 2)
        } else {
            (name.as_str(), 0)
        };
        let id = store.id(target).map_err(|_| Error::Checkpoint(format!("unknown tensor `{name}`")))?;
        if store.value(id).shape() != t.shape() {
            return Err(Error::Checkpoint(format!("`{name}` has shape {:?}", t.shape())));
        }
        match slot {
            0 => {
                seen[id.index()] = true;
                *store.value_mut(id) = t;
            }
            _ => {
                let pos = match moments.iter().position(|m| m.0 == id) {
                    Some(p) => p,
                    None => {
                        moments.push((id, None, None));
                        moments.len() - 1
                    }
                };
                if slot == 1 {
                    moments[pos].1 = Some(t);
                } else {
                    moments[pos].2 = Some(t);
                }
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        let name = &store.iter().nth(i).expect("index in range").1.name;
        return Err(Error::Checkpoint(format!("missing tensor `{name}`")));
    }
    let mut restored = Vec::with_capacity(moments.len());
    for (id, m, v) in moments {
        match (m, v) {
            (Some(m), Some(v)) => restored.push((id, m, v)),
            _ => return Err(Error::Checkpoint("unpaired optimizer moments".into())),
        }
    }
    let mut adam = Adam::new(header.betas[0], header.betas[1], header.eps);
    adam.restore(header.adam_steps, restored);
    Ok(Checkpoint { header, model, store, adam })
}

/// Writes atomically via a sibling temporary file.
pub fn save_checkpoint(path: &Path, header: &CheckpointHeader, store: &ParamStore<f32>, adam: &Adam<f32>) -> Result<()> {
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, encode(header, store, adam)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        encode(&self.header, &self.store, &self.adam)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;

    pub(crate) fn tiny_model() -> ModelConfig {
        let bb = BackboneConfig { stage_dims: [8, 12, 16, 20], stage_depths: [1, 1, 1, 1], ..Default::default() };
        ModelConfig {
            rgb_backbone: bb.clone(),
            noise_backbone: BackboneConfig { in_channels: 6, ..bb },
            decoder_dims: [16, 12, 8],
            ..Default::default()
        }
    }

    fn sample() -> (CheckpointHeader, ParamStore<f32>, Adam<f32>) {
        let cfg = tiny_model();
        let mut store = ParamStore::new();
        Model::new(&cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        let grads: Vec<_> = store
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(id, p)| (id, p.value.map(|v| v * 0.5 + 0.1)))
            .collect();
        adam.step(&mut store, &grads, 1e-3).unwrap();
        let header = CheckpointHeader {
            schema_version: SCHEMA_VERSION,
            step: 1,
            epoch: 0,
            seed: 5,
            adam_steps: adam.steps(),
            betas: [0.9, 0.999],
            eps: 1e-8,
            model: cfg,
        };
        (header, store, adam)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let (h, store, adam) = sample();
        let a = encode(&h, &store, &adam);
        let ck = decode(&a).unwrap();
        assert_eq!(ck.header, h);
        assert_eq!(ck.encode(), a);
        for (id, p) in store.iter() {
            assert_eq!(ck.store.value(id).data(), p.value.data());
        }
    }

    #[test]
    fn rejects_other_schema_versions() {
        let (mut h, store, adam) = sample();
        h.schema_version = 2;
        let bytes = encode(&h, &store, &adam);
        assert!(matches!(decode(&bytes), Err(Error::SchemaVersionMismatch { found: 2, expected: 1 })));
    }

    #[test]
    fn rejects_corruption() {
        let (h, store, adam) = sample();
        let bytes = encode(&h, &store, &adam);
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
        assert!(matches!(decode(b"PNG\n"), Err(Error::Checkpoint(_))));
    }
}
