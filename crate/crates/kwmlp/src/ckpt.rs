//! Checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   6 bytes  "KWMLP1"
//! version u32      currently 1
//! config  u32 length + JSON bytes ({"config": RunConfig, "labels": [...]})
//! count   u32      tensor records
//! record  u16 name length + name bytes
//!         u8 rank + u32 dims
//!         f32 data (row-major)
//! check   u64      FNV-1a 64 over every preceding byte
//! ```
//!
//! FNV-1a's per-byte step `state = (state ^ byte) * prime` is injective in
//! `state` for a fixed suffix, so any single corrupted byte changes the
//! trailing checksum. Loading verifies magic, version, checksum, and that
//! the tensor name set matches the selected architecture exactly.

use crate::config::{Arch, RunConfig};
use crate::error::{Error, Result};
use crate::model::{mixer::MixerParams, ModelParams};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use crate::train::Network;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 6] = b"KWMLP1";
pub const VERSION: u32 = 1;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut state = FNV_OFFSET;
    for &b in bytes {
        state = (state ^ b as u64).wrapping_mul(FNV_PRIME);
    }
    state
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Snapshot {
    config: RunConfig,
    labels: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub labels: Vec<String>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_network(config: &RunConfig, labels: &[String], net: &Network) -> Self {
        let mut tensors = Vec::new();
        net.visit(&mut |name, _, t| tensors.push((name.to_string(), t.clone())));
        Checkpoint {
            config: config.clone(),
            labels: labels.to_vec(),
            tensors,
        }
    }

    /// Rebuild the network this checkpoint holds. The stored name set must
    /// match the architecture's parameter names exactly.
    pub fn to_network(&self) -> Result<Network> {
        let mut rng = SplitMix64::new(0);
        let mut net = match self.config.arch {
            Arch::KwMlp => Network::KwMlp(ModelParams::init(self.config.model_config(), &mut rng)?),
            Arch::Mixer => Network::Mixer(MixerParams::init(self.config.mixer_config(), &mut rng)?),
        };
        let stored: BTreeMap<&str, &Tensor<f32>> = self
            .tensors
            .iter()
            .map(|(n, t)| (n.as_str(), t))
            .collect();
        let mut expected = Vec::new();
        net.visit(&mut |name, _, _| expected.push(name.to_string()));
        if expected.len() != stored.len() || expected.iter().any(|n| !stored.contains_key(n.as_str())) {
            let missing: Vec<&String> =
                expected.iter().filter(|n| !stored.contains_key(n.as_str())).collect();
            return Err(Error::Schema(format!(
                "tensor names do not match the {} architecture (stored {}, expected {}; missing {missing:?})",
                net.arch_name(),
                stored.len(),
                expected.len(),
            )));
        }
        let mut shape_err = None;
        net.visit_mut(&mut |name, _, t| {
            let source = stored[name];
            if source.shape() != t.shape() {
                shape_err.get_or_insert_with(|| {
                    format!(
                        "tensor {name} has shape {:?}, architecture expects {:?}",
                        source.shape(),
                        t.shape()
                    )
                });
                return;
            }
            *t = source.clone();
        });
        if let Some(msg) = shape_err {
            return Err(Error::Schema(msg));
        }
        Ok(net)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let snapshot = serde_json::to_vec(&Snapshot {
            config: self.config.clone(),
            labels: self.labels.clone(),
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(snapshot.len() as u32).to_le_bytes());
        out.extend_from_slice(&snapshot);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, tensor) in &self.tensors {
            let name_bytes = name.as_bytes();
            out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
            out.extend_from_slice(name_bytes);
            out.push(tensor.rank() as u8);
            for &dim in tensor.shape() {
                out.extend_from_slice(&(dim as u32).to_le_bytes());
            }
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let checksum = fnv1a64(&out);
        out.extend_from_slice(&checksum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let integrity = |msg: &str| Error::Integrity(msg.to_string());
        if bytes.len() < MAGIC.len() + 4 + 8 {
            return Err(integrity("file shorter than header + checksum"));
        }
        if &bytes[..6] != MAGIC {
            return Err(integrity("bad magic"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        let computed = fnv1a64(body);
        if stored != computed {
            return Err(integrity(&format!(
                "checksum mismatch: stored {stored:#018x}, computed {computed:#018x}"
            )));
        }

        let mut pos = 6usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if pos + n > body.len() {
                return Err(Error::Integrity("truncated checkpoint body".into()));
            }
            let s = &body[pos..pos + n];
            pos += n;
            Ok(s)
        };
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Schema(format!(
                "checkpoint format version {version}, this build reads {VERSION}"
            )));
        }
        let snap_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let snapshot: Snapshot = serde_json::from_slice(take(snap_len)?)?;
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(name_len)?.to_vec())
                .map_err(|_| Error::Integrity("tensor name is not utf-8".into()))?;
            let rank = take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = take(numel * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if pos != body.len() {
            return Err(Error::Integrity("trailing bytes after tensor records".into()));
        }
        Ok(Checkpoint {
            config: snapshot.config,
            labels: snapshot.labels,
            tensors,
        })
    }
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        Error::Integrity(msg) => Error::Integrity(format!("{}: {msg}", path.display())),
        other => other,
    })
}
