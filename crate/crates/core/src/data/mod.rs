//! Snippet feature sequences, their on-disk format, the synthetic
//! hierarchical-event generator and the ranking metrics.

mod featfile;
mod manifest;
mod metrics;
mod synth;

pub use featfile::{decode_feature_file, encode_feature_file, read_feature_file, write_feature_file};
pub use manifest::{assign_splits, read_manifest, write_manifest, ManifestEntry, Split};
pub use metrics::{average_precision, roc_auc};
pub use synth::{synth_generate, ModalityTree, SynthSpec, SynthTaxonomy};

use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:?}, expected \"DSRF\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{path}: unsupported version {found}")]
    BadVersion { path: PathBuf, found: u32 },
    #[error("{path}: truncated, expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: checksum mismatch, stored {stored:#010x}, computed {computed:#010x}")]
    Checksum {
        path: PathBuf,
        stored: u32,
        computed: u32,
    },
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("modality length mismatch: visual has {visual} snippets, audio {audio}")]
    ModalityMismatch { visual: usize, audio: usize },
}

/// One video as a sequence of snippet features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub id: String,
    /// `T x d_v`.
    pub visual: Tensor,
    /// `T x d_a` when present.
    pub audio: Option<Tensor>,
    pub frame_labels: Option<Vec<u8>>,
    pub video_label: u8,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.visual.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.visual.rows() == 0
    }

    pub fn visual_dim(&self) -> usize {
        self.visual.cols()
    }

    pub fn audio_dim(&self) -> usize {
        self.audio.as_ref().map_or(0, Tensor::cols)
    }

    /// Checks modality lengths, label range and that the video label is
    /// the OR of the frame labels.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let t = self.len();
        if t == 0 {
            return Err("sequence has no snippets".into());
        }
        if let Some(a) = &self.audio {
            if a.rows() != t {
                return Err(format!("visual has {t} snippets, audio {}", a.rows()));
            }
        }
        if self.video_label > 1 {
            return Err(format!("video label {} is not 0 or 1", self.video_label));
        }
        if let Some(fl) = &self.frame_labels {
            if fl.len() != t {
                return Err(format!("{} frame labels for {t} snippets", fl.len()));
            }
            if fl.iter().any(|&l| l > 1) {
                return Err("frame labels must be 0 or 1".into());
            }
            let any = u8::from(fl.contains(&1));
            if any != self.video_label {
                return Err(format!(
                    "video label {} disagrees with frame labels",
                    self.video_label
                ));
            }
        }
        if !self.visual.is_finite() || self.audio.as_ref().is_some_and(|a| !a.is_finite()) {
            return Err("non-finite features".into());
        }
        Ok(())
    }
}
