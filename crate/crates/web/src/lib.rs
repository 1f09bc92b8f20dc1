//! WebAssembly front end for the browser demo in `www/`.
//!
//! Each operation is a plain Rust function returning a serializable result,
//! so it runs and is tested natively; the `wasm_bindgen` exports wrap them
//! and hand JSON strings to the page.

use dsrl::data::{assign_splits, synth_generate, Split, SynthSpec};
use dsrl::graphs::{lshad, LshadParams};
use dsrl::manifold::{exp_map, geodesic_distance, lift_from_euclidean, log_map, LorentzPoint};
use dsrl::pipeline::{evaluate, train, Model, ModelConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Two lifted points and the geodesic between them, drawn in the Poincare
/// disk.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeodesicView {
    pub distance: f64,
    pub euclidean_distance: f64,
    /// `|<x,x>_L + 1|` for each endpoint.
    pub residuals: [f64; 2],
    pub path: Vec<[f64; 2]>,
}

fn to_disk(p: &LorentzPoint) -> [f64; 2] {
    let s = p.spatial();
    [s[0] / (1.0 + p.time()), s[1] / (1.0 + p.time())]
}

/// Lifts two points of the plane onto the hyperboloid and samples the
/// geodesic joining them.
pub fn geodesic_view(a: [f64; 2], b: [f64; 2], steps: usize) -> Result<GeodesicView, String> {
    let (pa, pb) = (lift_from_euclidean(&a), lift_from_euclidean(&b));
    let v = log_map(&pa, &pb).map_err(|e| e.to_string())?;
    let steps = steps.max(1);
    let path = (0..=steps)
        .map(|i| {
            let t = i as f64 / steps as f64;
            let step: Vec<f64> = v.coords().iter().map(|c| t * c).collect();
            exp_map(&pa, &step).map(|p| to_disk(&p)).map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    Ok(GeodesicView {
        distance: geodesic_distance(&pa, &pb).map_err(|e| e.to_string())?,
        euclidean_distance: ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt(),
        residuals: [pa.residual(), pb.residual()],
        path,
    })
}

/// Edge-keeping thresholds against Dirichlet energy, one curve per layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdCurves {
    pub energies: Vec<f64>,
    /// `thresholds[l][i]` is the threshold of layer `l + 1` at `energies[i]`.
    pub thresholds: Vec<Vec<f64>>,
}

pub fn threshold_curves(beta: f64, gamma: f64, layers: usize, max_energy: f64, samples: usize) -> ThresholdCurves {
    let p = LshadParams { beta, gamma };
    let samples = samples.max(2);
    let energies: Vec<f64> = (0..samples)
        .map(|i| max_energy * i as f64 / (samples - 1) as f64)
        .collect();
    let thresholds = (1..=layers)
        .map(|l| energies.iter().map(|&e| lshad(e, l, &p)).collect())
        .collect();
    ThresholdCurves { energies, thresholds }
}

/// Outcome of training a small model on synthetic videos.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionDemo {
    pub losses: Vec<f64>,
    pub ap: f64,
    pub auc: f64,
    /// Test video with the most violent snippets.
    pub video_id: String,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

/// Generates `videos` synthetic videos, trains for `epochs` on the train
/// split and scores the test split.
pub fn detection_demo(seed: u64, videos: usize, epochs: usize) -> Result<DetectionDemo, String> {
    let spec = SynthSpec {
        num_videos: videos,
        t_min: 24,
        t_max: 48,
        seed,
        ..SynthSpec::default()
    };
    let data = synth_generate(&spec).map_err(|e| e.to_string())?;
    let splits = assign_splits(data.len());
    let pick = |s: Split| -> Vec<_> {
        data.iter()
            .zip(&splits)
            .filter(|(_, &x)| x == s)
            .map(|(v, _)| v.clone())
            .collect()
    };
    let (train_set, val_set, test_set) = (pick(Split::Train), pick(Split::Val), pick(Split::Test));
    let config = ModelConfig {
        dim: 8,
        epochs,
        seed,
        ..ModelConfig::default()
    };
    let (model, mut store) =
        Model::new(config, spec.visual_dim, spec.audio_dim).map_err(|e| e.to_string())?;
    let log = train(&model, &mut store, &train_set, &val_set, |_| {}).map_err(|e| e.to_string())?;
    let report = evaluate(&model, &store, &test_set).map_err(|e| e.to_string())?;
    let video = report
        .videos
        .iter()
        .max_by_key(|v| v.labels.iter().filter(|&&l| l == 1).count())
        .ok_or("test split is empty")?;
    Ok(DetectionDemo {
        losses: log.epochs.iter().map(|e| e.loss).collect(),
        ap: report.ap,
        auc: report.auc,
        video_id: video.id.clone(),
        scores: video.scores.clone(),
        labels: video.labels.clone(),
    })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = geodesicView)]
pub fn geodesic_view_js(ax: f64, ay: f64, bx: f64, by: f64, steps: usize) -> Result<String, JsValue> {
    to_json(geodesic_view([ax, ay], [bx, by], steps))
}

#[wasm_bindgen(js_name = thresholdCurves)]
pub fn threshold_curves_js(beta: f64, gamma: f64, layers: usize, max_energy: f64, samples: usize) -> Result<String, JsValue> {
    to_json(Ok(threshold_curves(beta, gamma, layers, max_energy, samples)))
}

#[wasm_bindgen(js_name = detectionDemo)]
pub fn detection_demo_js(seed: u32, videos: usize, epochs: usize) -> Result<String, JsValue> {
    to_json(detection_demo(u64::from(seed), videos, epochs))
}
