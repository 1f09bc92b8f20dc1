use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Ablation, ModelConfig};
use crate::data::FeatureSequence;
use crate::dsi::{concat_max_pool_var, AttentionSimilarity, Dsi, DsiConfig};
use crate::error::{Error, Result};
use crate::graphs::{
    cosine_adjacency_var, row_softmax, temporal_adjacency, FixedGraphHgcn, Gcn, HeGcn, LayerTrace,
    ThresholdRule,
};
use crate::hypernn::{HyperClassifier, HyperLinear};
use crate::manifold::{is_on_manifold, ManifoldConfig};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// Snippet scores and the video score derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionScores {
    pub snippet_scores: Vec<f64>,
    pub video_score: f64,
    pub k_used: usize,
}

/// `floor(T / 16) + 1`.
pub fn mil_k(t: usize) -> usize {
    t / 16 + 1
}

/// Indices of the `k` largest scores, highest first; ties keep the lower
/// index first.
fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Mean of the top `k = floor(T/16) + 1` snippet scores, and `k`.
pub fn mil_video_score(scores: &[f64]) -> Result<(f64, usize)> {
    if scores.is_empty() {
        return Err(Error::Contract("video has no snippets".into()));
    }
    let k = mil_k(scores.len());
    let sum: f64 = top_k(scores, k).iter().map(|&i| scores[i]).sum();
    Ok((sum / k as f64, k))
}

const BCE_CLAMP: f64 = 1e-12;

/// `-(1/N) sum [y ln p + (1 - y) ln(1 - p)]` with `p` clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(preds: &[f64], labels: &[u8]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::Contract(format!(
            "bce over {} predictions and {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let total: f64 = preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / preds.len() as f64)
}

/// Tape form of [`bce_loss`] for a single `1x1` prediction.
pub fn bce_loss_var(tape: &mut Tape, pred: Var, label: u8) -> Var {
    let p = tape.clamp(pred, BCE_CLAMP, 1.0 - BCE_CLAMP);
    let q = if label == 1 {
        p
    } else {
        let neg = tape.neg(p);
        tape.offset(neg, 1.0)
    };
    let l = tape.log(q);
    tape.neg(l)
}

/// Three-tap temporal convolution with same padding, then relu.
#[derive(Debug, Clone)]
struct Conv3 {
    taps: [ParamId; 3],
    bias: ParamId,
}

impl Conv3 {
    fn new(store: &mut ParamStore, prefix: &str, n: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (n as f64).sqrt();
        let taps = [0, 1, 2].map(|i| store.add_uniform(format!("{prefix}.tap{i}"), n, n, bound, rng));
        Self {
            taps,
            bias: store.add_zeros(format!("{prefix}.bias"), 1, n),
        }
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (tap, offset) in self.taps.iter().zip([-1isize, 0, 1]) {
            let shifted = tape.shift_rows(x, offset);
            let y = tape.matmul(shifted, bound[*tap])?;
            acc = Some(match acc {
                Some(a) => tape.add(a, y)?,
                None => y,
            });
        }
        let z = tape.add(acc.expect("three taps"), bound[self.bias])?;
        Ok(tape.relu(z))
    }
}

/// Audio-from-visual attention used to enhance the audio stream.
#[derive(Debug, Clone)]
struct AudioAttention {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    dim: usize,
}

#[derive(Debug, Clone)]
struct Preprocess {
    visual_conv: Conv3,
    audio: Option<(Conv3, AudioAttention)>,
    proj_w: ParamId,
    proj_b: ParamId,
}

/// The full network. Parameters live in a separate [`ParamStore`] so they
/// can be bound to a tape as trainable leaves or constants.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub visual_dim: usize,
    pub audio_dim: usize,
    /// Verify every hyperbolic intermediate lies on the sheet.
    pub check_manifold: bool,
    pre: Preprocess,
    euclid_semantic: Gcn,
    euclid_temporal: Gcn,
    hyper_semantic: HeGcn,
    hyper_temporal: FixedGraphHgcn,
    dsi: Dsi,
    classifier: HyperClassifier,
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// `T x 1` snippet scores.
    pub scores: Var,
    /// `1 x 1` mean of the top-k scores.
    pub video_score: Var,
    pub k: usize,
    pub traces: Vec<LayerTrace>,
}

impl Model {
    /// Builds the network and its freshly initialised parameters from
    /// `config.seed`.
    pub fn new(config: ModelConfig, visual_dim: usize, audio_dim: usize) -> Result<(Self, ParamStore)> {
        config.validate()?;
        if visual_dim == 0 {
            return Err(Error::Config("visual feature dimension must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.dim;
        let half = d / 2;

        let visual_conv = Conv3::new(&mut store, "pre.visual_conv", visual_dim, &mut rng);
        let audio = (audio_dim > 0).then(|| {
            let conv = Conv3::new(&mut store, "pre.audio_conv", audio_dim, &mut rng);
            let bq = 1.0 / (audio_dim as f64).sqrt();
            let bv = 1.0 / (visual_dim as f64).sqrt();
            let att = AudioAttention {
                wq: store.add_uniform("pre.attn.wq", audio_dim, audio_dim, bq, &mut rng),
                wk: store.add_uniform("pre.attn.wk", visual_dim, audio_dim, bv, &mut rng),
                wv: store.add_uniform("pre.attn.wv", visual_dim, audio_dim, bv, &mut rng),
                dim: audio_dim,
            };
            (conv, att)
        });
        let fused = visual_dim + audio_dim;
        let pre = Preprocess {
            visual_conv,
            audio,
            proj_w: store.add_uniform("pre.proj.weight", fused, d, (6.0 / (fused + d) as f64).sqrt(), &mut rng),
            proj_b: store.add_zeros("pre.proj.bias", 1, d),
        };

        let mut dims = vec![d, half];
        dims.extend(std::iter::repeat(half).take(config.layers - 1));
        let euclid_semantic = Gcn::new(&mut store, "euclid.semantic", &dims, &mut rng);
        let euclid_temporal = Gcn::new(&mut store, "euclid.temporal", &dims, &mut rng);

        let hyper_layers = |prefix: &str, store: &mut ParamStore, rng: &mut ChaCha8Rng| -> Vec<HyperLinear> {
            dims.windows(2)
                .enumerate()
                .map(|(i, w)| {
                    let mut l = HyperLinear::new(
                        store,
                        &format!("{prefix}.{i}"),
                        w[0],
                        w[1],
                        config.phi_mode,
                        config.dropout,
                        rng,
                    );
                    l.scale = config.hyperbolic_scale;
                    l
                })
                .collect()
        };
        let rule = match config.ablation {
            Ablation::FixedThreshold => ThresholdRule::Fixed(config.fixed_threshold),
            _ => ThresholdRule::Lshad(config.lshad),
        };
        let hyper_semantic = HeGcn {
            layers: hyper_layers("hyper.semantic", &mut store, &mut rng),
            rule,
        };
        let hyper_temporal = FixedGraphHgcn {
            layers: hyper_layers("hyper.temporal", &mut store, &mut rng),
        };
        let dsi_config = match config.ablation {
            Ablation::CosineDsi => DsiConfig {
                similarity: AttentionSimilarity::Cosine,
                ..config.dsi
            },
            _ => config.dsi,
        };
        let dsi = Dsi::new(&mut store, "dsi", d, dsi_config, &mut rng);
        let classifier = HyperClassifier::new(&mut store, "classifier", d, config.eps, &mut rng);
        Ok((
            Self {
                config,
                visual_dim,
                audio_dim,
                check_manifold: false,
                pre,
                euclid_semantic,
                euclid_temporal,
                hyper_semantic,
                hyper_temporal,
                dsi,
                classifier,
            },
            store,
        ))
    }

    fn check_input(&self, f: &FeatureSequence) -> Result<()> {
        f.validate().map_err(|m| Error::Contract(format!("{}: {m}", f.id)))?;
        if f.visual_dim() != self.visual_dim || f.audio_dim() != self.audio_dim {
            return Err(Error::Contract(format!(
                "{}: features are {}+{} dimensional, model expects {}+{}",
                f.id,
                f.visual_dim(),
                f.audio_dim(),
                self.visual_dim,
                self.audio_dim
            )));
        }
        Ok(())
    }

    fn check_rows(&self, tape: &Tape, v: Var, stage: &str) -> Result<()> {
        if !self.check_manifold {
            return Ok(());
        }
        let cfg = ManifoldConfig::default();
        let t = tape.value(v);
        for r in 0..t.rows() {
            if !is_on_manifold(t.row(r), &cfg) {
                let row = t.row(r);
                let spatial: f64 = row[1..].iter().map(|x| x * x).sum();
                return Err(Error::Contract(format!(
                    "{stage}: row {r} is off the sheet (residual {:.3e})",
                    spatial - row[0] * row[0] + 1.0
                )));
            }
        }
        Ok(())
    }

    /// Convolution, audio enhancement, concatenation and projection to
    /// `T x dim`.
    pub fn preprocess_var(&self, tape: &mut Tape, bound: &Bound, visual: Var, audio: Option<Var>) -> Result<Var> {
        let v = self.pre.visual_conv.forward(tape, bound, visual)?;
        let fused = match (&self.pre.audio, audio) {
            (Some((conv, att)), Some(a)) => {
                let a = conv.forward(tape, bound, a)?;
                let q = tape.matmul(a, bound[att.wq])?;
                let k = tape.matmul(v, bound[att.wk])?;
                let val = tape.matmul(v, bound[att.wv])?;
                let kt = tape.transpose(k);
                let logits = tape.matmul(q, kt)?;
                let logits = tape.scale(logits, 1.0 / (att.dim as f64).sqrt());
                let w = tape.softmax_rows(logits);
                let ctx = tape.matmul(w, val)?;
                let enhanced = tape.add(a, ctx)?;
                tape.concat(v, enhanced, 1)?
            }
            (None, None) => v,
            _ => return Err(Error::Contract("audio presence does not match the model".into())),
        };
        let z = tape.matmul(fused, bound[self.pre.proj_w])?;
        Ok(tape.add(z, bound[self.pre.proj_b])?)
    }

    /// The whole network on tape-held features.
    pub fn forward_var(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        visual: Var,
        audio: Option<Var>,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<ForwardVars> {
        let t = tape.value(visual).rows();
        if t == 0 {
            return Err(Error::Contract("video has no snippets".into()));
        }
        let x = self.preprocess_var(tape, bound, visual, audio)?;
        let x = if training {
            tape.dropout(x, self.config.dropout, rng)?
        } else {
            x
        };
        let temporal = row_softmax(&temporal_adjacency(t, &self.config.temporal).adjacency);
        let temporal = tape.constant(temporal);

        // Euclidean branch.
        let sem_adj = cosine_adjacency_var(tape, x)?;
        let es = self.euclid_semantic.forward(tape, bound, sem_adj, x)?;
        let et = self.euclid_temporal.forward(tape, bound, temporal, x)?;
        let v_e = tape.concat(es, et, 1)?;

        let mut traces = Vec::new();
        let v_f = if self.config.ablation == Ablation::EuclideanOnly {
            v_e
        } else {
            // Hyperbolic branch.
            let p = tape.expmap0_rows(x);
            self.check_rows(tape, p, "lifted input")?;
            let hs = self.hyper_semantic.forward(tape, bound, p, training, rng, &mut traces)?;
            self.check_rows(tape, hs, "semantic HE-GCN output")?;
            let ht = self.hyper_temporal.forward(tape, bound, temporal, p, training, rng)?;
            self.check_rows(tape, ht, "temporal hyperbolic output")?;
            let hs = tape.logmap0_rows(hs)?;
            let ht = tape.logmap0_rows(ht)?;
            let v_h = tape.concat(hs, ht, 1)?;
            if self.check_manifold {
                let relifted = tape.expmap0_rows(v_h);
                self.check_rows(tape, relifted, "concatenated hyperbolic branch")?;
            }
            if self.config.ablation == Ablation::NoDsi {
                concat_max_pool_var(tape, v_e, v_h)?
            } else {
                self.dsi.forward(tape, bound, v_e, v_h)?.v_f
            }
        };
        let f = tape.expmap0_rows(v_f);
        self.check_rows(tape, f, "lifted fused representation")?;
        let scores = self.classifier.forward(tape, bound, f)?;
        let k = mil_k(t);
        let top = top_k(tape.value(scores).data(), k);
        let picked = tape.select_rows(scores, &top)?;
        let video_score = tape.mean(picked);
        Ok(ForwardVars {
            scores,
            video_score,
            k,
            traces,
        })
    }

    /// Records `f` on `tape` and runs the network.
    pub fn forward_sequence(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        f: &FeatureSequence,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<ForwardVars> {
        self.check_input(f)?;
        let visual = tape.constant(f.visual.clone());
        let audio = f.audio.as_ref().map(|a| tape.constant(a.clone()));
        self.forward_var(tape, bound, visual, audio, training, rng)
    }

    /// Inference (or seeded training-mode) scores for one video.
    pub fn forward(&self, store: &ParamStore, f: &FeatureSequence, training: bool, seed: u64) -> Result<DetectionScores> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = self.forward_sequence(&mut tape, &bound, f, training, &mut rng)?;
        Ok(DetectionScores {
            snippet_scores: tape.value(out.scores).data().to_vec(),
            video_score: tape.value(out.video_score).data()[0],
            k_used: out.k,
        })
    }

    /// Preprocessed `T x dim` features (inference mode).
    pub fn preprocess(&self, store: &ParamStore, f: &FeatureSequence) -> Result<Tensor> {
        self.check_input(f)?;
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let visual = tape.constant(f.visual.clone());
        let audio = f.audio.as_ref().map(|a| tape.constant(a.clone()));
        let x = self.preprocess_var(&mut tape, &bound, visual, audio)?;
        Ok(tape.value(x).clone())
    }

    /// Loss and parameter gradients of one video, with dropout drawn from
    /// `seed`.
    pub fn video_gradients(&self, store: &ParamStore, f: &FeatureSequence, seed: u64) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = self.forward_sequence(&mut tape, &bound, f, true, &mut rng)?;
        let loss = bce_loss_var(&mut tape, out.video_score, f.video_label);
        let value = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        let tensors = store
            .tensors()
            .iter()
            .zip(bound.vars())
            .map(|(t, v)| grads.get_or_zeros(*v, t.shape()))
            .collect();
        Ok((value, tensors))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthSpec};
    use crate::tensor::grad_check;

    #[test]
    fn mil_cases() {
        assert_eq!(mil_k(16), 2);
        assert_eq!(mil_k(15), 1);
        assert_eq!(mil_video_score(&[0.3]).unwrap(), (0.3, 1));
        assert_eq!(mil_video_score(&[0.9, 0.1, 0.8]).unwrap(), (0.9, 1));
        let mut s: Vec<f64> = (0..32).map(|i| i as f64 / 40.0).collect();
        let (v, k) = mil_video_score(&s).unwrap();
        assert_eq!(k, 3);
        assert!((v - (31.0 + 30.0 + 29.0) / 120.0).abs() < 1e-15);
        // Raising any score never lowers the video score.
        for i in 0..32 {
            let before = mil_video_score(&s).unwrap().0;
            s[i] += 0.05;
            assert!(mil_video_score(&s).unwrap().0 >= before);
        }
        assert!(mil_video_score(&[]).is_err());
    }

    #[test]
    fn bce_cases() {
        assert!(bce_loss(&[1.0, 0.0], &[1, 0]).unwrap() < 1e-11);
        for y in [0, 1] {
            assert!((bce_loss(&[0.5], &[y]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        }
        let want = -0.5 * (0.9f64.ln() + 0.8f64.ln());
        assert!((bce_loss(&[0.9, 0.2], &[1, 0]).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.1643).abs() < 1e-4);
        assert!(bce_loss(&[], &[]).is_err());
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::scalar(0.2));
        let l = bce_loss_var(&mut tape, p, 0);
        assert!((tape.value(l).data()[0] + 0.8f64.ln()).abs() < 1e-15);
    }

    fn toy(t: usize, audio: bool) -> FeatureSequence {
        let spec = SynthSpec {
            num_videos: 1,
            t_min: t,
            t_max: t,
            visual_dim: 5,
            audio_dim: if audio { 3 } else { 0 },
            seed: 2,
            ..SynthSpec::default()
        };
        synth_generate(&spec).unwrap().remove(0)
    }

    fn small_config(ablation: Ablation) -> ModelConfig {
        ModelConfig {
            dim: 8,
            ablation,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn shapes_and_ranges() {
        for audio in [false, true] {
            let f = toy(20, audio);
            let (model, store) = Model::new(small_config(Ablation::None), 5, f.audio_dim()).unwrap();
            let x = model.preprocess(&store, &f).unwrap();
            assert_eq!(x.shape(), [20, 8]);
            let s = model.forward(&store, &f, false, 0).unwrap();
            assert_eq!(s.snippet_scores.len(), 20);
            assert_eq!(s.k_used, 2);
            assert!(s.snippet_scores.iter().all(|&p| p > 0.0 && p < 1.0));
            assert_eq!(s.video_score, mil_video_score(&s.snippet_scores).unwrap().0);
        }
    }

    #[test]
    fn zero_input_preprocesses_to_zero() {
        let mut f = toy(6, true);
        f.visual = Tensor::zeros(6, 5);
        f.audio = Some(Tensor::zeros(6, 3));
        let (model, store) = Model::new(small_config(Ablation::None), 5, 3).unwrap();
        assert!(model.preprocess(&store, &f).unwrap().data().iter().all(|v| *v == 0.0));
    }

    /// Straight-line transcription of convolution, cross-modal attention,
    /// concatenation and projection.
    #[test]
    fn multimodal_preprocess_matches_transcription() {
        let f = toy(4, true);
        let (model, store) = Model::new(small_config(Ablation::None), 5, 3).unwrap();
        let get = |name: &str| store.get(store.find(name).unwrap()).to_rows();
        let conv = |x: &[Vec<f64>], prefix: &str| -> Vec<Vec<f64>> {
            let taps: Vec<Vec<Vec<f64>>> = (0..3).map(|i| get(&format!("{prefix}.tap{i}"))).collect();
            let b = get(&format!("{prefix}.bias"))[0].clone();
            let t = x.len();
            let n = b.len();
            (0..t)
                .map(|i| {
                    (0..n)
                        .map(|o| {
                            let mut s = b[o];
                            for (tap, off) in taps.iter().zip([-1i64, 0, 1]) {
                                let src = i as i64 + off;
                                if src >= 0 && (src as usize) < t {
                                    for (c, xv) in x[src as usize].iter().enumerate() {
                                        s += xv * tap[c][o];
                                    }
                                }
                            }
                            s.max(0.0)
                        })
                        .collect()
                })
                .collect()
        };
        let mm = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
            a.iter()
                .map(|r| (0..b[0].len()).map(|j| r.iter().enumerate().map(|(p, x)| x * b[p][j]).sum()).collect())
                .collect()
        };
        let v = conv(&f.visual.to_rows(), "pre.visual_conv");
        let a = conv(&f.audio.as_ref().unwrap().to_rows(), "pre.audio_conv");
        let q = mm(&a, &get("pre.attn.wq"));
        let k = mm(&v, &get("pre.attn.wk"));
        let val = mm(&v, &get("pre.attn.wv"));
        let mut fused = Vec::new();
        for i in 0..4 {
            let logits: Vec<f64> = (0..4)
                .map(|j| q[i].iter().zip(&k[j]).map(|(x, y)| x * y).sum::<f64>() / 3f64.sqrt())
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            let mut row = v[i].clone();
            for c in 0..3 {
                let ctx: f64 = (0..4).map(|j| logits[j].exp() / z * val[j][c]).sum();
                row.push(a[i][c] + ctx);
            }
            fused.push(row);
        }
        let mut want = mm(&fused, &get("pre.proj.weight"));
        let b = get("pre.proj.bias")[0].clone();
        for row in want.iter_mut() {
            for (x, bb) in row.iter_mut().zip(&b) {
                *x += bb;
            }
        }
        let got = model.preprocess(&store, &f).unwrap();
        for (g, w) in got.data().iter().zip(want.iter().flatten()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn single_snippet_video() {
        let f = toy(1, false);
        for ablation in Ablation::ALL {
            let (model, store) = Model::new(small_config(ablation), 5, 0).unwrap();
            let s = model.forward(&store, &f, false, 0).unwrap();
            assert_eq!(s.k_used, 1);
            assert_eq!(s.video_score, s.snippet_scores[0]);
        }
    }

    #[test]
    fn deterministic_and_manifold_checked() {
        let f = toy(24, true);
        for ablation in Ablation::ALL {
            let (mut model, store) = Model::new(small_config(ablation), 5, 3).unwrap();
            model.check_manifold = true;
            let a = model.forward(&store, &f, true, 7).unwrap();
            let b = model.forward(&store, &f, true, 7).unwrap();
            assert_eq!(a, b);
            model.forward(&store, &f, false, 0).unwrap();
        }
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let f = toy(5, true);
        let (model, store) = Model::new(small_config(Ablation::None), 5, 0).unwrap();
        assert!(model.forward(&store, &f, false, 0).is_err());
        assert!(Model::new(ModelConfig { dim: 7, ..ModelConfig::default() }, 5, 0).is_err());
    }

    #[test]
    fn end_to_end_gradients() {
        let f = toy(3, true);
        for ablation in [Ablation::None, Ablation::NoDsi, Ablation::EuclideanOnly] {
            let (model, store) = Model::new(small_config(ablation), 5, 3).unwrap();
            let np = store.len();
            let mut inputs = store.tensors().to_vec();
            inputs.push(f.visual.clone());
            inputs.push(f.audio.clone().unwrap());
            let report = grad_check(
                |tape, vars| -> Result<Var> {
                    let bound = Bound::from_vars(vars[..np].to_vec());
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    let out = model.forward_var(tape, &bound, vars[np], Some(vars[np + 1]), false, &mut rng)?;
                    Ok(bce_loss_var(tape, out.video_score, 1))
                },
                &inputs,
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error <= 1e-3, "{ablation:?}: {report:?}");
        }
    }
}
