//! Dual-space representation learning for weakly supervised violence
//! detection: Lorentz-model graph convolution, a Euclidean GCN branch,
//! cross-space attention fusion and a multiple-instance training pipeline.

pub mod checkpoint;
pub mod data;
pub mod dsi;
pub mod error;
pub mod graphs;
pub mod hypernn;
pub mod manifold;
pub mod params;
pub mod pipeline;
pub mod selftest;
pub mod tensor;

pub use error::{Error, Result};

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
