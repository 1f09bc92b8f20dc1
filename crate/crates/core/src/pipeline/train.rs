use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::data::{average_precision, roc_auc, FeatureSequence};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Adam, AdamConfig, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch's videos.
    pub loss: f64,
    pub lr: f64,
    /// Frame-level AP on the validation split, when one is available.
    pub val_ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept: the first with the highest
    /// validation AP, or the last epoch when no validation AP exists.
    pub best_epoch: usize,
}

/// Mixes run, epoch and position into a dropout seed.
fn derive_seed(seed: u64, epoch: usize, position: usize) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(epoch as u64 + 1))
        .wrapping_add(0xD1B5_4A32_D192_ED03u64.wrapping_mul(position as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mini-batch Adam over shuffled videos with a cosine-annealed learning
/// rate. Per-video gradients run in parallel and are summed in batch order,
/// so results do not depend on the thread count. `on_epoch` sees each log
/// entry as it is produced. On return `store` holds the parameters of the
/// epoch with the best validation AP.
pub fn train(
    model: &Model,
    store: &mut ParamStore,
    train_set: &[FeatureSequence],
    val_set: &[FeatureSequence],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainingLog> {
    let cfg = &model.config;
    if train_set.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            total_epochs: cfg.epochs,
            ..AdamConfig::default()
        },
        store.tensors(),
    );
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_5EED_5EED_5EED);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = TrainingLog {
        epochs: Vec::new(),
        best_epoch: 0,
    };
    let mut best: Option<(f64, ParamStore)> = None;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch_index, batch) in order.chunks(cfg.batch_size).enumerate() {
            let snapshot: &ParamStore = store;
            let results: Vec<Result<(f64, Vec<Tensor>)>> = batch
                .par_iter()
                .enumerate()
                .map(|(j, &i)| {
                    let seed = derive_seed(cfg.seed, epoch, batch_index * cfg.batch_size + j);
                    model.video_gradients(snapshot, &train_set[i], seed)
                })
                .collect();
            let mut batch_loss = 0.0;
            let mut sum: Vec<Tensor> = store
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect();
            for r in results {
                let (loss, grads) = r?;
                batch_loss += loss;
                for (s, g) in sum.iter_mut().zip(&grads) {
                    for (a, b) in s.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
            }
            let n = batch.len() as f64;
            if !batch_loss.is_finite() || sum.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                    param_norm: store.global_norm(),
                });
            }
            for g in sum.iter_mut() {
                for v in g.data_mut() {
                    *v /= n;
                }
            }
            adam.step(store.tensors_mut(), &sum, epoch)?;
            epoch_loss += batch_loss;
        }
        let val_ap = if val_set.is_empty() {
            None
        } else {
            validation_ap(model, store, val_set)?
        };
        let entry = EpochLog {
            epoch,
            loss: epoch_loss / train_set.len() as f64,
            lr: adam.lr_at(epoch),
            val_ap,
        };
        match (val_ap, &best) {
            (Some(ap), Some((best_ap, _))) if ap <= *best_ap => {}
            (Some(ap), _) => {
                best = Some((ap, store.clone()));
                log.best_epoch = epoch;
            }
            (None, _) => log.best_epoch = epoch,
        }
        on_epoch(&entry);
        log.epochs.push(entry);
    }
    if let Some((_, kept)) = best {
        *store = kept;
    }
    Ok(log)
}

/// Scores and labels of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoResult {
    pub id: String,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "AP")]
    pub ap: f64,
    #[serde(rename = "AUC")]
    pub auc: f64,
    #[serde(skip)]
    pub videos: Vec<VideoResult>,
}

/// Inference scores for every video, sorted by id.
pub fn score_videos(model: &Model, store: &ParamStore, data: &[FeatureSequence]) -> Result<Vec<VideoResult>> {
    let mut out = data
        .par_iter()
        .map(|f| {
            let labels = f
                .frame_labels
                .clone()
                .ok_or_else(|| Error::Contract(format!("{} has no frame labels", f.id)))?;
            let s = model.forward(store, f, false, 0)?;
            Ok(VideoResult {
                id: f.id.clone(),
                scores: s.snippet_scores,
                labels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

fn concat(videos: &[VideoResult]) -> (Vec<f64>, Vec<u8>) {
    let scores = videos.iter().flat_map(|v| v.scores.iter().copied()).collect();
    let labels = videos.iter().flat_map(|v| v.labels.iter().copied()).collect();
    (scores, labels)
}

fn validation_ap(model: &Model, store: &ParamStore, data: &[FeatureSequence]) -> Result<Option<f64>> {
    if data.iter().any(|f| f.frame_labels.is_none()) {
        return Ok(None);
    }
    let (scores, labels) = concat(&score_videos(model, store, data)?);
    if !labels.contains(&1) {
        return Ok(None);
    }
    average_precision(&scores, &labels).map(Some)
}

/// Frame-level AP and ROC-AUC over the concatenated snippet scores.
pub fn evaluate(model: &Model, store: &ParamStore, data: &[FeatureSequence]) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Contract("evaluation set is empty".into()));
    }
    let videos = score_videos(model, store, data)?;
    let (scores, labels) = concat(&videos);
    Ok(EvalReport {
        ap: average_precision(&scores, &labels)?,
        auc: roc_auc(&scores, &labels)?,
        videos,
    })
}
