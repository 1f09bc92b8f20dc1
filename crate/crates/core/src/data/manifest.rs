//! Dataset manifests: a JSON array of `{id, path, split}` records.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub path: String,
    pub split: Split,
}

/// Splits `n` items 70/15/15 by count, in order: train first, then
/// validation, then test. Validation and test get `floor(15 n / 100)`
/// each and train keeps the remainder.
pub fn assign_splits(n: usize) -> Vec<Split> {
    let held = n * 15 / 100;
    let train = n - 2 * held;
    (0..n)
        .map(|i| {
            if i < train {
                Split::Train
            } else if i < train + held {
                Split::Val
            } else {
                Split::Test
            }
        })
        .collect()
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<(), IngestError> {
    let json = serde_json::to_string_pretty(entries).expect("manifest serializes");
    std::fs::write(path, json + "\n").map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| IngestError::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}
