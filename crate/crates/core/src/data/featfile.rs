//! Little-endian feature files:
//!
//! ```text
//! "DSRF" | u32 version | u32 T | u32 d_v | u32 d_a | u8 has_frame_labels
//! f32 visual [T x d_v] | f32 audio [T x d_a] | u8 labels [T] (optional)
//! u8 video_label | u32 crc32 of everything before it
//! ```

use std::path::Path;

use super::{FeatureSequence, IngestError};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"DSRF";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4 + 1;

pub fn encode_feature_file(f: &FeatureSequence) -> Vec<u8> {
    let t = f.len();
    let (dv, da) = (f.visual_dim(), f.audio_dim());
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * t * (dv + da) + t + 5);
    buf.extend_from_slice(MAGIC);
    for v in [VERSION, t as u32, dv as u32, da as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.push(u8::from(f.frame_labels.is_some()));
    let audio = f.audio.as_ref().map_or(&[][..], Tensor::data);
    for &x in f.visual.data().iter().chain(audio) {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    if let Some(fl) = &f.frame_labels {
        buf.extend_from_slice(fl);
    }
    buf.push(f.video_label);
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

fn f32_block(bytes: &[u8], rows: usize, cols: usize) -> Tensor {
    let data = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4-byte chunk"))))
        .collect();
    Tensor::new(rows, cols, data).expect("block length matches shape")
}

/// Parses a feature file held in memory. `path` only labels errors; the
/// sequence id is the file stem.
pub fn decode_feature_file(bytes: &[u8], path: &Path) -> Result<FeatureSequence, IngestError> {
    let p = || path.to_path_buf();
    if bytes.len() < 4 {
        return Err(IngestError::Truncated {
            path: p(),
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(IngestError::BadMagic {
            path: p(),
            found: bytes[..4].try_into().expect("4-byte slice"),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(IngestError::Truncated {
            path: p(),
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(IngestError::BadVersion {
            path: p(),
            found: version,
        });
    }
    let t = u32_at(bytes, 8) as usize;
    let dv = u32_at(bytes, 12) as usize;
    let da = u32_at(bytes, 16) as usize;
    let has_labels = match bytes[20] {
        0 => false,
        1 => true,
        other => {
            return Err(IngestError::Malformed {
                path: p(),
                reason: format!("has_frame_labels byte is {other}"),
            })
        }
    };
    let expected = t
        .checked_mul(dv + da)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN + if has_labels { t } else { 0 } + 1 + 4))
        .ok_or_else(|| IngestError::Malformed {
            path: p(),
            reason: "header dimensions overflow".into(),
        })?;
    if bytes.len() < expected {
        return Err(IngestError::Truncated {
            path: p(),
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(IngestError::Malformed {
            path: p(),
            reason: format!("{} trailing bytes", bytes.len() - expected),
        });
    }
    let stored = u32_at(bytes, expected - 4);
    let computed = crc32fast::hash(&bytes[..expected - 4]);
    if stored != computed {
        return Err(IngestError::Checksum {
            path: p(),
            stored,
            computed,
        });
    }
    let mut at = HEADER_LEN;
    let visual = f32_block(&bytes[at..at + 4 * t * dv], t, dv);
    at += 4 * t * dv;
    let audio = (da > 0).then(|| f32_block(&bytes[at..at + 4 * t * da], t, da));
    at += 4 * t * da;
    let frame_labels = has_labels.then(|| bytes[at..at + t].to_vec());
    if has_labels {
        at += t;
    }
    let video_label = bytes[at];
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let seq = FeatureSequence {
        id,
        visual,
        audio,
        frame_labels,
        video_label,
    };
    seq.validate()
        .map_err(|reason| IngestError::Malformed { path: p(), reason })?;
    Ok(seq)
}

pub fn write_feature_file(f: &FeatureSequence, path: &Path) -> Result<(), IngestError> {
    std::fs::write(path, encode_feature_file(f)).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_feature_file(path: &Path) -> Result<FeatureSequence, IngestError> {
    let bytes = std::fs::read(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_feature_file(&bytes, path)
}
