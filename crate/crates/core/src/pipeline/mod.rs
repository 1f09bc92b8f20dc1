//! Model assembly, the multiple-instance objective, training and
//! evaluation.
//!
//! Snippet features are convolved, the audio stream is enhanced by
//! attention over the visual stream, and the result feeds two branches: a
//! Euclidean GCN over cosine and temporal graphs, and a hyperbolic branch
//! (HE-GCN over the semantic graph, Lorentz aggregation over the temporal
//! graph). Cross-space attention fuses them, a Lorentzian classifier scores
//! each snippet and the mean of the top-k snippet scores scores the video.

mod config;
mod model;
mod train;

pub use config::{Ablation, ModelConfig};
pub use model::{bce_loss, bce_loss_var, mil_k, mil_video_score, DetectionScores, ForwardVars, Model};
pub use train::{evaluate, score_videos, train, EpochLog, EvalReport, TrainingLog, VideoResult};
