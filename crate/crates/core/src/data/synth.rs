//! Synthetic videos built from a hierarchical event taxonomy.
//!
//! Two top categories (normal, violent) each hold `subcategories` leaves,
//! and each leaf develops through `phases` phases (pre-event trend, action,
//! post-event behaviour). Centroids are nested Gaussian offsets, so leaves
//! of one category sit closer to each other than to the other category.
//! An ambiguous normal event borrows the action centroid of the nearest
//! violent leaf and differs from real violence only in its surrounding
//! phases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::FeatureSequence;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub num_videos: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub visual_dim: usize,
    /// Zero produces unimodal sequences.
    pub audio_dim: usize,
    /// 2: category and subcategory with one phase per event. 3: adds phases.
    pub depth: usize,
    pub subcategories: usize,
    pub phases: usize,
    /// Fraction of normal events whose action phase sits on a violent centroid.
    pub ambiguity_rate: f64,
    pub noise: f64,
    /// Fraction of videos that contain violence.
    pub violent_fraction: f64,
    /// Spread of category, subcategory and phase centroids.
    pub category_scale: f64,
    pub subcategory_scale: f64,
    pub phase_scale: f64,
    /// How far a snippet drifts toward the next phase within its own phase.
    pub drift: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_videos: 200,
            t_min: 16,
            t_max: 64,
            visual_dim: 24,
            audio_dim: 16,
            depth: 3,
            subcategories: 3,
            phases: 3,
            ambiguity_rate: 0.3,
            noise: 0.6,
            violent_fraction: 0.5,
            category_scale: 1.0,
            subcategory_scale: 0.6,
            phase_scale: 0.5,
            drift: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_videos == 0 {
            return fail("num_videos must be at least 1".into());
        }
        if self.t_min == 0 || self.t_min > self.t_max {
            return fail(format!("invalid snippet range [{}, {}]", self.t_min, self.t_max));
        }
        if self.visual_dim == 0 {
            return fail("visual_dim must be at least 1".into());
        }
        if !(2..=3).contains(&self.depth) {
            return fail(format!("depth must be 2 or 3, got {}", self.depth));
        }
        if self.subcategories == 0 || self.phases == 0 {
            return fail("subcategories and phases must be at least 1".into());
        }
        for (name, v) in [
            ("ambiguity_rate", self.ambiguity_rate),
            ("violent_fraction", self.violent_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        for (name, v) in [
            ("noise", self.noise),
            ("category_scale", self.category_scale),
            ("subcategory_scale", self.subcategory_scale),
            ("phase_scale", self.phase_scale),
            ("drift", self.drift),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }

    fn phase_count(&self) -> usize {
        if self.depth == 2 {
            1
        } else {
            self.phases
        }
    }

    /// The phase index holding the event's action.
    fn action_phase(&self) -> usize {
        self.phase_count() / 2
    }
}

fn gaussian(rng: &mut impl Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Centroids of one modality, indexed `[category][subcategory][phase]`.
#[derive(Debug, Clone)]
pub struct ModalityTree {
    pub background: Vec<f64>,
    pub leaves: [Vec<Vec<Vec<f64>>>; 2],
}

impl ModalityTree {
    fn sample(spec: &SynthSpec, dim: usize, rng: &mut impl Rng) -> Self {
        let phases = spec.phase_count();
        let categories: Vec<Vec<f64>> = (0..2).map(|_| gaussian(rng, dim, spec.category_scale)).collect();
        let background = add(&categories[0], &gaussian(rng, dim, spec.subcategory_scale));
        let mut tree = |c: usize| -> Vec<Vec<Vec<f64>>> {
            (0..spec.subcategories)
                .map(|_| {
                    let sub = add(&categories[c], &gaussian(rng, dim, spec.subcategory_scale));
                    (0..phases)
                        .map(|_| add(&sub, &gaussian(rng, dim, spec.phase_scale)))
                        .collect()
                })
                .collect()
        };
        let normal = tree(0);
        let violent = tree(1);
        Self {
            background,
            leaves: [normal, violent],
        }
    }
}

/// The centroid hierarchy behind a generated dataset.
#[derive(Debug, Clone)]
pub struct SynthTaxonomy {
    pub visual: ModalityTree,
    pub audio: Option<ModalityTree>,
    /// For each normal subcategory, the violent subcategory whose action
    /// centroid (visual) is nearest to its own.
    pub nearest_violent: Vec<usize>,
}

impl SynthTaxonomy {
    pub fn sample(spec: &SynthSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let visual = ModalityTree::sample(spec, spec.visual_dim, &mut rng);
        let audio = (spec.audio_dim > 0).then(|| ModalityTree::sample(spec, spec.audio_dim, &mut rng));
        let a = spec.action_phase();
        let nearest_violent = visual.leaves[0]
            .iter()
            .map(|n| {
                (0..spec.subcategories)
                    .min_by(|&i, &j| {
                        dist2(&n[a], &visual.leaves[1][i][a])
                            .total_cmp(&dist2(&n[a], &visual.leaves[1][j][a]))
                    })
                    .expect("at least one subcategory")
            })
            .collect();
        Ok(Self {
            visual,
            audio,
            nearest_violent,
        })
    }

    /// Every violent phase centroid of the visual modality.
    pub fn violent_visual_centroids(&self) -> Vec<&[f64]> {
        self.visual.leaves[1]
            .iter()
            .flat_map(|sub| sub.iter().map(Vec::as_slice))
            .collect()
    }
}

struct Event {
    start: usize,
    len: usize,
    violent: bool,
    sub: usize,
    ambiguous: bool,
}

fn plan_events(spec: &SynthSpec, t: usize, violent_video: bool, rng: &mut impl Rng) -> Vec<Event> {
    let count = rng.gen_range(1..=2usize);
    let mut events: Vec<Event> = Vec::new();
    let min_len = spec.phase_count().max(3).min(t);
    for e in 0..count {
        let max_len = (t / 3).max(min_len);
        let len = rng.gen_range(min_len..=max_len);
        let start = rng.gen_range(0..=t - len);
        if events
            .iter()
            .any(|o| start < o.start + o.len && o.start < start + len)
        {
            continue;
        }
        let violent = violent_video && e == 0;
        events.push(Event {
            start,
            len,
            violent,
            sub: rng.gen_range(0..spec.subcategories),
            ambiguous: !violent && rng.gen::<f64>() < spec.ambiguity_rate,
        });
    }
    events
}

/// The centroid a snippet is drawn around: its phase centroid drifted
/// toward the next phase of the same event by `drift * (u - 1/2)`.
fn event_centroid(
    tree: &ModalityTree,
    spec: &SynthSpec,
    ev: &Event,
    nearest_violent: &[usize],
    phase: usize,
    u: f64,
) -> Vec<f64> {
    let cat = usize::from(ev.violent);
    let phases = spec.phase_count();
    let action = spec.action_phase();
    let centroid = |p: usize| -> &[f64] {
        if ev.ambiguous && p == action {
            &tree.leaves[1][nearest_violent[ev.sub]][p]
        } else {
            &tree.leaves[cat][ev.sub][p]
        }
    };
    let cur = centroid(phase);
    if phases == 1 {
        return cur.to_vec();
    }
    let other = if phase + 1 < phases {
        centroid(phase + 1)
    } else {
        centroid(phase - 1)
    };
    let sign = if phase + 1 < phases { 1.0 } else { -1.0 };
    let w = sign * spec.drift * (u - 0.5);
    cur.iter().zip(other).map(|(c, o)| c + w * (o - c)).collect()
}

fn round_f32(x: f64) -> f64 {
    f64::from(x as f32)
}

fn generate_one(spec: &SynthSpec, tax: &SynthTaxonomy, index: usize) -> FeatureSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1)));
    let t = rng.gen_range(spec.t_min..=spec.t_max);
    let violent_video = rng.gen::<f64>() < spec.violent_fraction;
    let events = plan_events(spec, t, violent_video, &mut rng);
    let phases = spec.phase_count();

    let mut labels = vec![0u8; t];
    let mut render = |tree: &ModalityTree, dim: usize, rng: &mut ChaCha8Rng| -> Tensor {
        let mut out = Tensor::zeros(t, dim);
        for s in 0..t {
            let center = match events.iter().find(|e| s >= e.start && s < e.start + e.len) {
                Some(ev) => {
                    let pos = (s - ev.start) as f64 / ev.len as f64 * phases as f64;
                    let phase = (pos.floor() as usize).min(phases - 1);
                    let u = pos - phase as f64;
                    if ev.violent {
                        labels[s] = 1;
                    }
                    event_centroid(tree, spec, ev, &tax.nearest_violent, phase, u)
                }
                None => tree.background.clone(),
            };
            let noise = gaussian(rng, dim, spec.noise);
            for (j, (c, n)) in center.iter().zip(noise).enumerate() {
                out.set(s, j, round_f32(c + n));
            }
        }
        out
    };
    let visual = render(&tax.visual, spec.visual_dim, &mut rng);
    let audio = tax.audio.as_ref().map(|a| render(a, spec.audio_dim, &mut rng));
    let video_label = u8::from(labels.contains(&1));
    FeatureSequence {
        id: format!("vid{index:05}"),
        visual,
        audio,
        frame_labels: Some(labels),
        video_label,
    }
}

/// Generates `spec.num_videos` labelled sequences, deterministically in
/// `spec.seed`. Feature values are rounded to single precision so that a
/// write/read cycle through a feature file is exact.
pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<FeatureSequence>> {
    let tax = SynthTaxonomy::sample(spec)?;
    Ok((0..spec.num_videos).map(|i| generate_one(spec, &tax, i)).collect())
}
