use serde::{Deserialize, Serialize};

use crate::dsi::DsiConfig;
use crate::error::{Error, Result};
use crate::graphs::{LshadParams, TemporalParams};
use crate::hypernn::PhiMode;

/// Which parts of the model are switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// The full model.
    #[default]
    None,
    /// Euclidean GCN branch only; the classifier sees `V_E`.
    EuclideanOnly,
    /// Both branches, fused by max-pooling their concatenation without
    /// cross-space attention.
    NoDsi,
    /// Full model with cosine similarity inside the attention map.
    CosineDsi,
    /// Full model with a constant HE-GCN threshold instead of LSHAD.
    FixedThreshold,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::None,
        Ablation::EuclideanOnly,
        Ablation::NoDsi,
        Ablation::CosineDsi,
        Ablation::FixedThreshold,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::EuclideanOnly => "euclidean-only",
            Ablation::NoDsi => "no-dsi",
            Ablation::CosineDsi => "cosine-dsi",
            Ablation::FixedThreshold => "fixed-threshold",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?}")))
    }
}

/// Architecture and optimisation settings. Defaults are desk-scale; the
/// reference setting trains with batch size 256.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Width of each branch output; each graph path produces `dim / 2`.
    pub dim: usize,
    /// Graph layers per path.
    pub layers: usize,
    pub lshad: LshadParams,
    pub temporal: TemporalParams,
    pub dsi: DsiConfig,
    /// Applied to the preprocessed snippet features during training and
    /// inside dropout-mode hyperbolic layers.
    pub dropout: f64,
    /// Classifier margin `eps`.
    pub eps: f64,
    pub phi_mode: PhiMode,
    /// Output radius bound of activation-norm hyperbolic layers.
    pub hyperbolic_scale: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub ablation: Ablation,
    /// Threshold used by the fixed-threshold ablation.
    pub fixed_threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            layers: 2,
            lshad: LshadParams::default(),
            temporal: TemporalParams::default(),
            dsi: DsiConfig::default(),
            dropout: 0.6,
            eps: 1.0,
            phi_mode: PhiMode::ActivationNorm,
            hyperbolic_scale: 1.0,
            epochs: 30,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
            ablation: Ablation::None,
            fixed_threshold: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim < 2 || self.dim % 2 != 0 {
            return fail(format!("dim must be even and at least 2, got {}", self.dim));
        }
        if self.layers == 0 {
            return fail("layers must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        for (name, v) in [
            ("eps", self.eps),
            ("lr", self.lr),
            ("hyperbolic_scale", self.hyperbolic_scale),
            ("temporal.sigma", self.temporal.sigma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch_size must be at least 1".into());
        }
        if !(self.fixed_threshold > 0.0 && self.fixed_threshold < 1.0) {
            return fail(format!("fixed_threshold must be in (0, 1), got {}", self.fixed_threshold));
        }
        if !(self.lshad.beta.is_finite() && self.lshad.gamma.is_finite()) {
            return fail("lshad parameters must be finite".into());
        }
        self.dsi.validate()
    }
}
