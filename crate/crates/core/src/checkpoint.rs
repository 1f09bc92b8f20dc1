//! Little-endian parameter checkpoints:
//!
//! ```text
//! "DSRC" | u32 version | u32 visual_dim | u32 audio_dim
//! u32 config_len | config JSON [config_len]
//! u32 tensor_count | per tensor: u32 name_len | name | u32 rows | u32 cols | f64 data
//! u32 crc32 of everything before it
//! ```

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::params::ParamStore;
use crate::pipeline::{Model, ModelConfig};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"DSRC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:?}, expected \"DSRC\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{path}: checkpoint version {found} is not supported (expected {CHECKPOINT_VERSION})")]
    VersionMismatch { path: PathBuf, found: u32 },
    #[error("{path}: truncated at byte {at}")]
    Truncated { path: PathBuf, at: usize },
    #[error("{path}: checksum mismatch, stored {stored:#010x}, computed {computed:#010x}")]
    Checksum {
        path: PathBuf,
        stored: u32,
        computed: u32,
    },
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("{path}: checkpoint was trained on {expected_visual}+{expected_audio} input dims, data has {found_visual}+{found_audio}")]
    FeatureMismatch {
        path: PathBuf,
        expected_visual: usize,
        expected_audio: usize,
        found_visual: usize,
        found_audio: usize,
    },
}

/// A model configuration, its input dimensions and trained parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, store: &ParamStore) -> Self {
        Self {
            config: model.config.clone(),
            visual_dim: model.visual_dim,
            audio_dim: model.audio_dim,
            names: store.names().to_vec(),
            tensors: store.tensors().to_vec(),
        }
    }

    /// Rebuilds the model and loads the stored parameters, checking that
    /// names and shapes match the architecture.
    pub fn into_model(self, path: &Path) -> Result<(Model, ParamStore), crate::Error> {
        let malformed = |reason: String| CheckpointError::Malformed {
            path: path.to_path_buf(),
            reason,
        };
        let (model, mut store) = Model::new(self.config, self.visual_dim, self.audio_dim)?;
        if store.names() != self.names.as_slice() {
            return Err(malformed("parameter names do not match the architecture".into()).into());
        }
        store.load_tensors(self.tensors).map_err(malformed)?;
        Ok((model, store))
    }

    /// Fails with [`CheckpointError::FeatureMismatch`] unless the data
    /// dimensions match the ones the checkpoint was trained on.
    pub fn check_features(&self, path: &Path, visual_dim: usize, audio_dim: usize) -> Result<(), CheckpointError> {
        if (visual_dim, audio_dim) == (self.visual_dim, self.audio_dim) {
            return Ok(());
        }
        Err(CheckpointError::FeatureMismatch {
            path: path.to_path_buf(),
            expected_visual: self.visual_dim,
            expected_audio: self.audio_dim,
            found_visual: visual_dim,
            found_audio: audio_dim,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let config = serde_json::to_vec(&self.config).expect("model config serializes");
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        let put = |buf: &mut Vec<u8>, v: usize| buf.extend_from_slice(&(v as u32).to_le_bytes());
        put(&mut buf, CHECKPOINT_VERSION as usize);
        put(&mut buf, self.visual_dim);
        put(&mut buf, self.audio_dim);
        put(&mut buf, config.len());
        buf.extend_from_slice(&config);
        put(&mut buf, self.tensors.len());
        for (name, t) in self.names.iter().zip(&self.tensors) {
            put(&mut buf, name.len());
            buf.extend_from_slice(name.as_bytes());
            put(&mut buf, t.rows());
            put(&mut buf, t.cols());
            for x in t.data() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    /// Parses a checkpoint held in memory; `path` only labels errors.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self, CheckpointError> {
        let p = || path.to_path_buf();
        if bytes.len() < 8 {
            return Err(CheckpointError::Truncated { path: p(), at: bytes.len() });
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4-byte slice");
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic { path: p(), found: magic });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4-byte slice"));
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::VersionMismatch { path: p(), found: version });
        }
        if bytes.len() < 12 {
            return Err(CheckpointError::Truncated { path: p(), at: bytes.len() });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4-byte slice"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(CheckpointError::Checksum {
                path: p(),
                stored,
                computed,
            });
        }
        let mut r = Reader { body, at: 8, path };
        let visual_dim = r.u32()? as usize;
        let audio_dim = r.u32()? as usize;
        let config_len = r.u32()? as usize;
        let config: ModelConfig = serde_json::from_slice(r.take(config_len)?).map_err(|e| CheckpointError::Malformed {
            path: p(),
            reason: format!("config: {e}"),
        })?;
        let count = r.u32()? as usize;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| CheckpointError::Malformed {
                path: p(),
                reason: "parameter name is not UTF-8".into(),
            })?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let n = rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| CheckpointError::Malformed {
                path: p(),
                reason: format!("{name}: shape {rows}x{cols} overflows"),
            })?;
            let data = r
                .take(n)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push(Tensor::new(rows, cols, data).expect("length matches shape"));
            names.push(name);
        }
        if r.at != body.len() {
            return Err(CheckpointError::Malformed {
                path: p(),
                reason: format!("{} trailing bytes", body.len() - r.at),
            });
        }
        Ok(Self {
            config,
            visual_dim,
            audio_dim,
            names,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.encode()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::decode(&bytes, path)
    }
}

struct Reader<'a> {
    body: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.body.len());
        let end = end.ok_or_else(|| CheckpointError::Truncated {
            path: self.path.to_path_buf(),
            at: self.at,
        })?;
        let s = &self.body[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4-byte slice")))
    }
}
