//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"MMACKPT1"
//! u32 config length, config bytes      sorted `key=value\n` lines
//! u32 parameter count
//! per parameter:
//!   u32 name length, name bytes (UTF-8)
//!   u32 rank, rank x u64 dims
//!   numel x f64
//! u64 FNV-1a 64 of every preceding byte
//! ```
//!
//! Training metadata travels in the config block under `meta.` keys.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::network::{format_kv, parse_kv, Model, ModelConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC_PREFIX: &[u8; 7] = b"MMACKPT";
pub const CHECKPOINT_VERSION: u8 = b'1';

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version `{0}`")]
    UnknownVersion(char),
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("checkpoint truncated or malformed: {0}")]
    Malformed(String),
    #[error("embedded config invalid: {0}")]
    Config(String),
    #[error("parameter `{name}` has shape {found:?}, config expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("parameter `{0}` is not part of the configured model")]
    UnknownParameter(String),
    #[error("parameter `{0}` appears more than once")]
    DuplicateParameter(String),
    #[error("parameter `{0}` is missing")]
    MissingParameter(String),
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Training metadata stored alongside the parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingMeta {
    pub epoch: usize,
    pub seed: u64,
    pub loss: f64,
}

pub fn encode_checkpoint(model: &Model, meta: &TrainingMeta) -> Vec<u8> {
    let mut kv: BTreeMap<String, String> = model.config().to_kv();
    kv.insert("format_version".into(), "1".into());
    kv.insert("meta.epoch".into(), meta.epoch.to_string());
    kv.insert("meta.loss".into(), meta.loss.to_string());
    kv.insert("meta.seed".into(), meta.seed.to_string());
    let config = format_kv(&kv);

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC_PREFIX);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (name, t) in model.params().iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = fnv1a64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Malformed(format!("unexpected end reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model, TrainingMeta), CheckpointError> {
    if bytes.len() < 8 || &bytes[..7] != CHECKPOINT_MAGIC_PREFIX {
        return Err(CheckpointError::BadMagic);
    }
    if bytes[7] != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnknownVersion(bytes[7] as char));
    }
    if bytes.len() < 16 {
        return Err(CheckpointError::Malformed("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let computed = fnv1a64(body);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }

    let mut r = Reader { buf: body, pos: 8 };
    let clen = r.u32("config length")?;
    let text = std::str::from_utf8(r.take(clen, "config")?)
        .map_err(|_| CheckpointError::Malformed("config is not UTF-8".into()))?;
    let kv = parse_kv(text).map_err(|e| CheckpointError::Config(e.to_string()))?;
    let get = |key: &str| kv.get(key).map(String::as_str);
    if get("format_version") != Some("1") {
        return Err(CheckpointError::Config("missing or unsupported format_version".into()));
    }
    let meta = TrainingMeta {
        epoch: get("meta.epoch").and_then(|v| v.parse().ok()).unwrap_or(0),
        seed: get("meta.seed").and_then(|v| v.parse().ok()).unwrap_or(0),
        loss: get("meta.loss").and_then(|v| v.parse().ok()).unwrap_or(f64::NAN),
    };
    let config = ModelConfig::from_kv(&kv).map_err(|e| CheckpointError::Config(e.to_string()))?;
    let mut model = Model::build(&config).map_err(|e| CheckpointError::Config(e.to_string()))?;

    let count = r.u32("parameter count")?;
    let mut seen = vec![false; model.params().len()];
    for _ in 0..count {
        let nlen = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(nlen, "name")?)
            .map_err(|_| CheckpointError::Malformed("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")?;
        if rank > 8 {
            return Err(CheckpointError::Malformed(format!("parameter `{name}` has rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64("dimension")? as usize);
        }
        let pos = model
            .params()
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| CheckpointError::UnknownParameter(name.clone()))?;
        if seen[pos] {
            return Err(CheckpointError::DuplicateParameter(name));
        }
        let expected = model.params().tensors()[pos].shape().to_vec();
        if dims != expected {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected,
                found: dims,
            });
        }
        let numel: usize = dims.iter().product();
        let raw = r.take(numel * 8, "values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        model.params_mut().tensors_mut()[pos] = Tensor::new(dims, data).expect("dims checked");
        seen[pos] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(CheckpointError::MissingParameter(model.params().iter().nth(missing).unwrap().0.to_string()));
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Malformed("trailing bytes after parameters".into()));
    }
    Ok((model, meta))
}

pub fn save_checkpoint(model: &Model, meta: &TrainingMeta, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    std::fs::write(path, encode_checkpoint(model, meta))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, TrainingMeta), CheckpointError> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    fn small() -> Model {
        let cfg = ModelConfig::default().with_stage_counts(3, 2, &[4, 6, 8], 4);
        Model::build(&ModelConfig { attention_dim: 2, head_hidden: 4, ..cfg }).unwrap()
    }

    #[test]
    fn truncation_fails_checksum() {
        let bytes = encode_checkpoint(&small(), &TrainingMeta::default());
        let cut = &bytes[..bytes.len() - 20];
        assert!(matches!(decode_checkpoint(cut), Err(CheckpointError::Checksum { .. })));
    }

    #[test]
    fn unknown_version_and_magic() {
        let mut bytes = encode_checkpoint(&small(), &TrainingMeta::default());
        bytes[7] = b'2';
        assert!(matches!(decode_checkpoint(&bytes), Err(CheckpointError::UnknownVersion('2'))));
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn meta_roundtrip() {
        let meta = TrainingMeta {
            epoch: 7,
            seed: 99,
            loss: 0.125,
        };
        let (_, back) = decode_checkpoint(&encode_checkpoint(&small(), &meta)).unwrap();
        assert_eq!(back, meta);
    }
}
