use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::models::{ModelConfig, ModelKind};
use crate::numerics::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SAFEckpt";
pub const CHECKPOINT_VERSION: u8 = 1;

const PREFIX_LEN: usize = 8 + 1 + 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {CHECKPOINT_VERSION})")]
    Version(u8),
    #[error("truncated checkpoint: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("{0} unexpected bytes after the last parameter")]
    TrailingBytes(usize),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint parameters do not match the model: {0}")]
    Layout(String),
    #[error("checkpoint i/o on {path}: {message}")]
    Io { path: String, message: String },
}

/// Validation scores of the selected epoch (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestMetrics {
    pub epoch: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u8,
    pub config: ModelConfig,
    /// Parameters in model layout order.
    pub params: Vec<(String, Tensor)>,
    pub vocab_hash: String,
    pub metrics: Option<BestMetrics>,
    /// Resolved run settings, as flat key/value pairs.
    pub provenance: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    config: ModelConfig,
    params: Vec<BlobRef>,
    vocab_hash: String,
    metrics: Option<BestMetrics>,
    #[serde(default)]
    provenance: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct BlobRef {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the blob section.
    offset: usize,
    /// Number of f64 values.
    len: usize,
}

impl Checkpoint {
    pub fn kind(&self) -> ModelKind {
        self.config.kind()
    }

    pub fn from_store(
        config: ModelConfig,
        store: &ParamStore,
        vocab_hash: impl Into<String>,
        metrics: Option<BestMetrics>,
    ) -> Result<Self, CheckpointError> {
        let ckpt = Self {
            format_version: CHECKPOINT_VERSION,
            config,
            params: store.iter().map(|(_, p)| (p.name().to_string(), p.value().clone())).collect(),
            vocab_hash: vocab_hash.into(),
            metrics,
            provenance: BTreeMap::new(),
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// A fresh store holding these parameters.
    pub fn store(&self) -> Result<ParamStore, CheckpointError> {
        let mut store = ParamStore::new();
        for (name, t) in &self.params {
            store.add(name.clone(), t.clone()).map_err(|e| CheckpointError::Layout(e.to_string()))?;
        }
        Ok(store)
    }

    /// Names, order and shapes must equal the config's parameter layout.
    pub fn validate(&self) -> Result<(), CheckpointError> {
        self.config.validate().map_err(|e| CheckpointError::Header(e.to_string()))?;
        let specs = self.config.param_specs();
        let want: BTreeSet<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        let have: BTreeSet<&str> = self.params.iter().map(|(n, _)| n.as_str()).collect();
        if want != have || have.len() != self.params.len() {
            let missing: Vec<_> = want.difference(&have).collect();
            let extra: Vec<_> = have.difference(&want).collect();
            return Err(CheckpointError::Layout(format!("missing {missing:?}, unexpected {extra:?}")));
        }
        for (spec, (name, t)) in specs.iter().zip(&self.params) {
            if &spec.name != name {
                return Err(CheckpointError::Layout(format!("expected {:?} at this position, found {name:?}", spec.name)));
            }
            if spec.shape != t.shape() {
                return Err(CheckpointError::Layout(format!(
                    "{name:?} has shape {:?}, expected {:?}",
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        self.validate()?;
        let mut offset = 0;
        let params = self
            .params
            .iter()
            .map(|(name, t)| {
                let r = BlobRef {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                    len: t.len(),
                };
                offset += t.len() * 8;
                r
            })
            .collect();
        let header = Header {
            kind: self.kind(),
            config: self.config.clone(),
            params,
            vocab_hash: self.vocab_hash.clone(),
            metrics: self.metrics,
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let header_len = u32::try_from(json.len()).map_err(|_| CheckpointError::Header("header too large".into()))?;
        let mut out = Vec::with_capacity(PREFIX_LEN + json.len() + offset);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(self.format_version);
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.params {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let truncated = |needed: usize| CheckpointError::Truncated {
            needed,
            have: bytes.len(),
        };
        if bytes.len() < CHECKPOINT_MAGIC.len() {
            return Err(if CHECKPOINT_MAGIC.starts_with(bytes) { truncated(PREFIX_LEN) } else { CheckpointError::BadMagic });
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < PREFIX_LEN {
            return Err(truncated(PREFIX_LEN));
        }
        if bytes[8] != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(bytes[8]));
        }
        let header_len = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes")) as usize;
        let blob_start = PREFIX_LEN + header_len;
        if bytes.len() < blob_start {
            return Err(truncated(blob_start));
        }
        let header: Header =
            serde_json::from_slice(&bytes[PREFIX_LEN..blob_start]).map_err(|e| CheckpointError::Header(e.to_string()))?;
        if header.kind != header.config.kind() {
            return Err(CheckpointError::Header(format!(
                "kind {} disagrees with config kind {}",
                header.kind,
                header.config.kind()
            )));
        }
        let blobs = &bytes[blob_start..];
        let mut expected_offset = 0usize;
        let mut params = Vec::with_capacity(header.params.len());
        for r in header.params {
            if r.offset != expected_offset {
                return Err(CheckpointError::Header(format!("{:?} at offset {}, expected {expected_offset}", r.name, r.offset)));
            }
            if r.shape.iter().product::<usize>() != r.len {
                return Err(CheckpointError::Header(format!("{:?} length {} disagrees with shape {:?}", r.name, r.len, r.shape)));
            }
            let end = r.offset + r.len * 8;
            if blobs.len() < end {
                return Err(truncated(blob_start + end));
            }
            let data = blobs[r.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(r.shape, data).map_err(|e| CheckpointError::Header(e.to_string()))?;
            params.push((r.name, t));
            expected_offset = end;
        }
        if blobs.len() > expected_offset {
            return Err(CheckpointError::TrailingBytes(blobs.len() - expected_offset));
        }
        let ckpt = Self {
            format_version: bytes[8],
            config: header.config,
            params,
            vocab_hash: header.vocab_hash,
            metrics: header.metrics,
            provenance: header.provenance,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| io_error(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::models::{ModelRng, StudentConfig, TeacherAConfig, TeacherBConfig};

    fn configs() -> Vec<ModelConfig> {
        let student = StudentConfig {
            embed_dim: 8,
            layers: 1,
            heads: 2,
            ffn_dim: 16,
            seq_len: 12,
            ..StudentConfig::new(30)
        };
        let ta = TeacherAConfig {
            embed_dim: 6,
            filters_per_width: 3,
            ..TeacherAConfig::new(30)
        };
        let tb = TeacherBConfig {
            embed_dim: 6,
            hidden_dim: 5,
            ..TeacherBConfig::new(30)
        };
        vec![ModelConfig::TeacherA(ta), ModelConfig::TeacherB(tb), ModelConfig::Student(student)]
    }

    fn sample(cfg: ModelConfig) -> Checkpoint {
        let store = cfg.init_store(&mut ModelRng::seed_from_u64(1)).unwrap();
        let mut c = Checkpoint::from_store(
            cfg,
            &store,
            "abc123",
            Some(BestMetrics {
                epoch: 3,
                precision: 0.1 + 0.2,
                recall: 1.0 / 3.0,
                f1: 0.4,
            }),
        )
        .unwrap();
        c.provenance.insert("train.seed".into(), "7".into());
        c
    }

    #[test]
    fn round_trip_every_kind() {
        for cfg in configs() {
            let c = sample(cfg);
            let bytes = c.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_bytes().unwrap(), bytes);
            let store = back.store().unwrap();
            assert_eq!(store.len(), c.params.len());
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = sample(configs().remove(0));
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
        assert!(matches!(Checkpoint::load(&dir.path().join("nope")), Err(CheckpointError::Io { .. })));
    }

    #[test]
    fn corruption_rejected() {
        let bytes = sample(configs().remove(2)).to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic));
        let mut bad = bytes.clone();
        bad[8] = 2;
        assert_eq!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Version(2)));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated { .. })));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..20]), Err(CheckpointError::Truncated { .. })));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..4]), Err(CheckpointError::Truncated { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(Checkpoint::from_bytes(&long), Err(CheckpointError::TrailingBytes(1)));
        let mut bad = bytes.clone();
        bad[14] = b'#';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Header(_))));
        assert_eq!(Checkpoint::from_bytes(b"hello, world!!"), Err(CheckpointError::BadMagic));
    }

    #[test]
    fn name_set_mismatch_rejected() {
        let mut c = sample(configs().remove(0));
        c.params.pop();
        assert!(matches!(c.to_bytes(), Err(CheckpointError::Layout(_))));
        let mut c = sample(configs().remove(0));
        c.params[0].0 = "bogus".into();
        assert!(matches!(c.validate(), Err(CheckpointError::Layout(_))));
    }
}
