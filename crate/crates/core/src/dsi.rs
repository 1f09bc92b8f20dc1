//! Dual-space interaction: thresholded cross-space attention between the
//! Euclidean and hyperbolic branch outputs, residual mixing and max-pool
//! fusion.
//!
//! Hyperbolic features enter as tangent coordinates at the origin. Queries
//! and keys are lifted onto the `K = -1` sheet before their Lorentzian
//! similarity is taken. `CSA(target, source)` enhances `target` with
//! information from `source`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::{cosine_similarity_var, lorentz_similarity_var};
use crate::manifold::{log_at_origin, LorentzPoint};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// How query/key similarity is measured inside the attention map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionSimilarity {
    /// `exp(-d)` between lifted queries and keys.
    Lorentz,
    /// Cosine similarity of the raw projections.
    Cosine,
}

/// How the attention map is applied to keys and values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsaVariant {
    /// `softmax_T(A K / sqrt(d)) * V`: the map multiplies the keys, the
    /// result is normalised over snippets per channel and gates the values
    /// elementwise.
    Literal,
    /// `A V`.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DsiConfig {
    /// Similarities at or below this are zeroed before the softmax.
    pub lambda: f64,
    /// Weight of the attention output in the residual mix.
    pub alpha: f64,
    pub similarity: AttentionSimilarity,
    pub variant: CsaVariant,
}

impl Default for DsiConfig {
    fn default() -> Self {
        Self {
            lambda: 0.8,
            alpha: 0.3,
            similarity: AttentionSimilarity::Lorentz,
            variant: CsaVariant::Literal,
        }
    }
}

impl DsiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Config(format!("lambda must be in (0, 1), got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Query, key and value projections for one attention direction, each
/// `d x d` and applied on the right of row features.
#[derive(Debug, Clone, PartialEq)]
pub struct CsaWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

impl CsaWeights {
    fn dim(&self) -> usize {
        self.wq.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsiParams {
    pub config: DsiConfig,
    pub dim: usize,
    /// Enhances the Euclidean branch from the hyperbolic one.
    pub e_from_h: CsaWeights,
    /// Enhances the hyperbolic branch from the (enhanced) Euclidean one.
    pub h_from_e: CsaWeights,
}

impl DsiParams {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.dim == 0 {
            return Err(Error::Config("attention dimension must be at least 1".into()));
        }
        for w in [&self.e_from_h, &self.h_from_e] {
            for m in [&w.wq, &w.wk, &w.wv] {
                if m.shape() != [self.dim, self.dim] {
                    return Err(Error::Config(format!(
                        "projection {:?} is not {d}x{d}",
                        m.shape(),
                        d = self.dim
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Outputs of one fusion step. Hyperbolic quantities are tangent
/// coordinates at the origin except `v_h`, which keeps the input points.
#[derive(Debug, Clone, PartialEq)]
pub struct DualRepresentation {
    pub v_e: Tensor,
    pub v_h: Vec<LorentzPoint>,
    pub v_e_prime: Tensor,
    pub v_h_prime: Tensor,
    pub v_f: Tensor,
}

// ---------------------------------------------------------------------------
// Tape forms.

/// `T_q x T_k` attention map: similarities at or below `lambda` become 0,
/// then each row is softmaxed.
pub fn thresholded_attention_var(
    tape: &mut Tape,
    q: Var,
    k: Var,
    lambda: f64,
    similarity: AttentionSimilarity,
) -> Result<Var> {
    let sim = match similarity {
        AttentionSimilarity::Lorentz => {
            let ql = tape.expmap0_rows(q);
            let kl = tape.expmap0_rows(k);
            lorentz_similarity_var(tape, ql, kl, -1.0, false)?
        }
        AttentionSimilarity::Cosine => cosine_similarity_var(tape, q, k)?,
    };
    let mask = tape.value(sim).map(|v| if v > lambda { 1.0 } else { 0.0 });
    let mask = tape.constant(mask);
    let kept = tape.mul(sim, mask)?;
    Ok(tape.softmax_rows(kept))
}

/// Handles of one direction's projections on a tape.
#[derive(Debug, Clone, Copy)]
pub struct CsaVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

/// `CSA(target, source)`: queries from `target`, keys and values from
/// `source`. Both are `T x d`.
pub fn cross_space_attention_var(
    tape: &mut Tape,
    target: Var,
    source: Var,
    w: CsaVars,
    config: &DsiConfig,
) -> Result<Var> {
    let (ts, ss) = (tape.value(target).shape(), tape.value(source).shape());
    let d = tape.value(w.wq).rows();
    if ts != ss || ts[1] != d {
        return Err(Error::Contract(format!(
            "cross-space attention on {ts:?} and {ss:?} with {d}-dimensional projections"
        )));
    }
    let q = tape.matmul(target, w.wq)?;
    let k = tape.matmul(source, w.wk)?;
    let v = tape.matmul(source, w.wv)?;
    let a = thresholded_attention_var(tape, q, k, config.lambda, config.similarity)?;
    match config.variant {
        CsaVariant::Literal => {
            let ak = tape.matmul(a, k)?;
            let scaled = tape.scale(ak, 1.0 / (d as f64).sqrt());
            let cols = tape.transpose(scaled);
            let cols = tape.softmax_rows(cols);
            let weights = tape.transpose(cols);
            Ok(tape.mul(weights, v)?)
        }
        CsaVariant::Standard => Ok(tape.matmul(a, v)?),
    }
}

/// Feature-axis concatenation `[a, b]` max-pooled with window 2 and stride
/// 2 after interleaving, so column `i` of the output is `max(a_i, b_i)`.
pub fn concat_max_pool_var(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.value(a).cols();
    let cat = tape.concat(a, b, 1)?;
    let order: Vec<usize> = (0..d).flat_map(|i| [i, d + i]).collect();
    let inter = tape.select_cols(cat, &order)?;
    Ok(tape.max_pool_cols(inter, 2, 2)?)
}

/// Tape handles of a fusion step.
#[derive(Debug, Clone, Copy)]
pub struct FusedVars {
    pub v_e_prime: Var,
    pub v_h_prime: Var,
    pub v_f: Var,
}

/// The interaction block on `T x d` inputs; `v_h` holds tangent
/// coordinates at the origin.
pub fn dual_space_fuse_var(
    tape: &mut Tape,
    v_e: Var,
    v_h: Var,
    e_from_h: CsaVars,
    h_from_e: CsaVars,
    config: &DsiConfig,
) -> Result<FusedVars> {
    let ce = cross_space_attention_var(tape, v_e, v_h, e_from_h, config)?;
    let ce = tape.scale(ce, config.alpha);
    let v_e_prime = tape.add(ce, v_e)?;
    let ch = cross_space_attention_var(tape, v_h, v_e_prime, h_from_e, config)?;
    let ch = tape.scale(ch, config.alpha);
    let v_h_prime = tape.add(ch, v_h)?;
    let v_f = concat_max_pool_var(tape, v_e_prime, v_h_prime)?;
    Ok(FusedVars {
        v_e_prime,
        v_h_prime,
        v_f,
    })
}

pub const QK_INIT_SCALE: f64 = 0.01;

/// Trainable interaction block.
#[derive(Debug, Clone)]
pub struct Dsi {
    pub config: DsiConfig,
    pub dim: usize,
    e_from_h: [ParamId; 3],
    h_from_e: [ParamId; 3],
}

impl Dsi {
    /// `d x d` projections. Values are Glorot-uniform. Queries and keys
    /// start at `QK_INIT_SCALE` times that bound, so lifted queries and keys
    /// sit near the origin with similarities above the threshold and the
    /// attention map receives gradient from the first step.
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, config: DsiConfig, rng: &mut impl Rng) -> Self {
        let bound = (3.0 / dim as f64).sqrt();
        let mut three = |dir: &str| {
            [("wq", QK_INIT_SCALE), ("wk", QK_INIT_SCALE), ("wv", 1.0)]
                .map(|(n, scale)| store.add_uniform(format!("{prefix}.{dir}.{n}"), dim, dim, scale * bound, rng))
        };
        let e_from_h = three("e_from_h");
        let h_from_e = three("h_from_e");
        Self {
            config,
            dim,
            e_from_h,
            h_from_e,
        }
    }

    fn vars(ids: &[ParamId; 3], bound: &Bound) -> CsaVars {
        CsaVars {
            wq: bound[ids[0]],
            wk: bound[ids[1]],
            wv: bound[ids[2]],
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, v_e: Var, v_h: Var) -> Result<FusedVars> {
        dual_space_fuse_var(
            tape,
            v_e,
            v_h,
            Self::vars(&self.e_from_h, bound),
            Self::vars(&self.h_from_e, bound),
            &self.config,
        )
    }

    pub fn export(&self, store: &ParamStore) -> DsiParams {
        let w = |ids: &[ParamId; 3]| CsaWeights {
            wq: store.get(ids[0]).clone(),
            wk: store.get(ids[1]).clone(),
            wv: store.get(ids[2]).clone(),
        };
        DsiParams {
            config: self.config,
            dim: self.dim,
            e_from_h: w(&self.e_from_h),
            h_from_e: w(&self.h_from_e),
        }
    }
}

// ---------------------------------------------------------------------------
// Plain forms, evaluated on a throwaway tape.

fn const_vars(tape: &mut Tape, w: &CsaWeights) -> CsaVars {
    CsaVars {
        wq: tape.constant(w.wq.clone()),
        wk: tape.constant(w.wk.clone()),
        wv: tape.constant(w.wv.clone()),
    }
}

/// Thresholded attention map between the rows of `q` and `k`.
pub fn thresholded_attention_map(
    q: &Tensor,
    k: &Tensor,
    lambda: f64,
    similarity: AttentionSimilarity,
) -> Result<Tensor> {
    if q.cols() != k.cols() {
        return Err(Error::Contract(format!(
            "queries have {} features, keys {}",
            q.cols(),
            k.cols()
        )));
    }
    let mut tape = Tape::new();
    let (qv, kv) = (tape.constant(q.clone()), tape.constant(k.clone()));
    let a = thresholded_attention_var(&mut tape, qv, kv, lambda, similarity)?;
    Ok(tape.value(a).clone())
}

pub fn cross_space_attention(target: &Tensor, source: &Tensor, w: &CsaWeights, config: &DsiConfig) -> Result<Tensor> {
    if w.dim() != target.cols() {
        return Err(Error::Contract(format!(
            "{}-dimensional projections on {}-dimensional features",
            w.dim(),
            target.cols()
        )));
    }
    let mut tape = Tape::new();
    let (t, s) = (tape.constant(target.clone()), tape.constant(source.clone()));
    let wv = const_vars(&mut tape, w);
    let out = cross_space_attention_var(&mut tape, t, s, wv, config)?;
    Ok(tape.value(out).clone())
}

/// Fuses a Euclidean `T x d` matrix with `T` points of `L^d`.
pub fn dual_space_fuse(v_e: &Tensor, v_h: &[LorentzPoint], p: &DsiParams) -> Result<DualRepresentation> {
    p.validate()?;
    if v_h.len() != v_e.rows() || v_h.iter().any(|x| x.dim() != p.dim) || v_e.cols() != p.dim {
        return Err(Error::Contract(format!(
            "Euclidean input {:?} and {} hyperbolic points do not match dimension {}",
            v_e.shape(),
            v_h.len(),
            p.dim
        )));
    }
    let tangent = Tensor::from_rows(&v_h.iter().map(log_at_origin).collect::<Vec<_>>())?;
    let mut tape = Tape::new();
    let (e, h) = (tape.constant(v_e.clone()), tape.constant(tangent));
    let ew = const_vars(&mut tape, &p.e_from_h);
    let hw = const_vars(&mut tape, &p.h_from_e);
    let out = dual_space_fuse_var(&mut tape, e, h, ew, hw, &p.config)?;
    let v_f = tape.value(out.v_f).clone();
    if !v_f.is_finite() {
        return Err(Error::Degenerate("non-finite fused representation".into()));
    }
    Ok(DualRepresentation {
        v_e: v_e.clone(),
        v_h: v_h.to_vec(),
        v_e_prime: tape.value(out.v_e_prime).clone(),
        v_h_prime: tape.value(out.v_h_prime).clone(),
        v_f,
    })
}
