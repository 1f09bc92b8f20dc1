//! Run configuration: a JSON file mirroring the generator and model
//! settings plus paths, with command-line overrides applied on top.

use std::path::{Path, PathBuf};

use dsrl::data::SynthSpec;
use dsrl::pipeline::{Ablation, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root for the dataset, checkpoint, logs and evaluation files.
    pub out: PathBuf,
    /// Directory holding `manifest.json`; `<out>/data` when unset.
    pub data: Option<PathBuf>,
    /// Checkpoint written by `train` and read by `eval`; `<out>/model.ckpt`
    /// when unset.
    pub checkpoint: Option<PathBuf>,
    pub synth: SynthSpec,
    pub model: ModelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("dsrl-out"),
            data: None,
            checkpoint: None,
            synth: SynthSpec::default(),
            model: ModelConfig::default(),
        }
    }
}

/// Values given on the command line; each replaces the file's value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    /// Seeds both the generator and the model.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub videos: Option<usize>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub ablate: Option<Ablation>,
    pub checkpoint: Option<PathBuf>,
}

impl RunConfig {
    /// Parses a JSON config; unknown keys are rejected.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("{}: {e}", origin.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text, path)
    }

    /// The file (or defaults) with `overrides` applied and validated.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.synth.seed = seed;
            self.model.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(n) = o.videos {
            self.synth.num_videos = n;
        }
        if let Some(e) = o.epochs {
            self.model.epochs = e;
        }
        if let Some(b) = o.batch {
            self.model.batch_size = b;
        }
        if let Some(a) = o.ablate {
            self.model.ablation = a;
        }
        if let Some(c) = &o.checkpoint {
            self.checkpoint = Some(c.clone());
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.synth.validate()?;
        self.model.validate()?;
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data.clone().unwrap_or_else(|| self.out.join("data"))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.data_dir().join("manifest.json")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("model.ckpt"))
    }

    pub fn train_log_path(&self) -> PathBuf {
        self.out.join("train_log.json")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out.join("eval")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::from_json(r#"{"model": {"epochs": 3}, "synth": {"num_videos": 12}}"#, Path::new("c.json"))
            .unwrap();
        assert_eq!(cfg.model.epochs, 3);
        assert_eq!(cfg.synth.num_videos, 12);
        assert_eq!(cfg.model.dim, ModelConfig::default().dim);
        assert_eq!(cfg.out, PathBuf::from("dsrl-out"));
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        for text in [
            r#"{"epochs": 3}"#,
            r#"{"model": {"epoch": 3}}"#,
            r#"{"synth": {"videos": 3}}"#,
            r#"{"model": {"dsi": {"lambda": 0.5, "beta": 1}}}"#,
        ] {
            let err = RunConfig::from_json(text, Path::new("c.json")).unwrap_err();
            assert!(matches!(err, CliError::Validation(_)), "{text}");
        }
    }

    #[test]
    fn flags_override_file_values() {
        let mut cfg = RunConfig::from_json(
            r#"{"out": "a", "model": {"epochs": 3, "batch_size": 2, "seed": 1}, "synth": {"seed": 1}}"#,
            Path::new("c.json"),
        )
        .unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            out: Some(PathBuf::from("b")),
            epochs: Some(5),
            ablate: Some(Ablation::NoDsi),
            ..Overrides::default()
        });
        assert_eq!((cfg.model.seed, cfg.synth.seed), (9, 9));
        assert_eq!(cfg.out, PathBuf::from("b"));
        assert_eq!(cfg.model.epochs, 5);
        assert_eq!(cfg.model.batch_size, 2);
        assert_eq!(cfg.model.ablation, Ablation::NoDsi);
        assert_eq!(cfg.checkpoint_path(), PathBuf::from("b/model.ckpt"));
        assert_eq!(cfg.manifest_path(), PathBuf::from("b/data/manifest.json"));
    }

    #[test]
    fn zero_videos_is_a_validation_error() {
        let o = Overrides {
            videos: Some(0),
            ..Overrides::default()
        };
        assert!(matches!(RunConfig::resolve(None, &o), Err(CliError::Validation(_))));
    }

    #[test]
    fn default_roundtrips_through_json() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text, Path::new("x")).unwrap(), cfg);
    }
}
