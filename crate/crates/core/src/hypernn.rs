//! Hyperbolic layers: the curvature-preserving linear map and the
//! Lorentzian-metric snippet classifier.
//!
//! Each layer comes in two forms: a per-point `f64` function working on
//! [`LorentzPoint`]s, and a batched tape layer (rows are points) used for
//! training. The tests cross-check the two.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{lorentz_inner, LorentzPoint, ManifoldConfig};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// How the spatial output of [`hyper_linear`] is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiMode {
    /// `phi = W dropout(x)`.
    Dropout,
    /// `phi = scale * sigmoid(v.x + b') * (W relu(x) + b) / |W relu(x) + b|`.
    ActivationNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperLinearParams {
    /// `m x (n+1)`.
    pub weight: Tensor,
    /// Length `n + 1`.
    pub v: Vec<f64>,
    /// Length `m`.
    pub bias: Vec<f64>,
    pub bias_prime: f64,
    pub scale: f64,
    pub mode: PhiMode,
    pub dropout: f64,
}

impl HyperLinearParams {
    /// Uniform `[-1/sqrt(n+1), 1/sqrt(n+1)]` weights, zero biases.
    pub fn init(n: usize, m: usize, mode: PhiMode, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / ((n + 1) as f64).sqrt();
        Self {
            weight: Tensor::from_fn(m, n + 1, |_, _| rng.gen_range(-bound..=bound)),
            v: (0..=n).map(|_| rng.gen_range(-bound..=bound)).collect(),
            bias: vec![0.0; m],
            bias_prime: 0.0,
            scale: 1.0,
            mode,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) {
            return Err(Error::Config(format!("scale must be > 0, got {}", self.scale)));
        }
        if !self.weight.is_finite() || self.v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("non-finite weights".into()));
        }
        if self.v.len() != self.weight.cols() || self.bias.len() != self.weight.rows() {
            return Err(Error::Config(format!(
                "weight {:?} inconsistent with v ({}) / bias ({})",
                self.weight.shape(),
                self.v.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|r| w.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_input(x: &LorentzPoint, cols: usize) -> Result<()> {
    if x.coords().len() != cols {
        return Err(Error::Contract(format!(
            "input has {} coordinates, layer expects {cols}",
            x.coords().len()
        )));
    }
    Ok(())
}

/// Applies the adapted matrix `f_x(M)` to `x`, where `M = [v^T; W]` is
/// `(m+1) x (n+1)`. The first row is rescaled by
/// `sqrt(|Wx|^2 - 1/K) / (v^T x)`, so the product is
/// `[sqrt(|Wx|^2 - 1/K); Wx]` and lies on the `m`-dimensional sheet.
pub fn f_x_m(matrix: &Tensor, x: &LorentzPoint) -> Result<LorentzPoint> {
    check_input(x, matrix.cols())?;
    if matrix.rows() < 2 {
        return Err(Error::Contract("matrix needs at least two rows".into()));
    }
    let v = matrix.row(0);
    let vx = dot(v, x.coords());
    if vx == 0.0 {
        return Err(Error::Degenerate("v^T x = 0 in matrix adaptation".into()));
    }
    let rest = Tensor::new(
        matrix.rows() - 1,
        matrix.cols(),
        matrix.data()[matrix.cols()..].to_vec(),
    )?;
    let wx = matvec(&rest, x.coords());
    let k = x.config().curvature();
    let sq: f64 = wx.iter().map(|a| a * a).sum();
    let prefactor = (sq - 1.0 / k).sqrt() / vx;
    let mut coords = Vec::with_capacity(wx.len() + 1);
    coords.push(prefactor * vx);
    coords.extend(wx);
    Ok(LorentzPoint::new(coords, *x.config())?)
}

/// The hyperbolic linear layer `[sqrt(|phi|^2 - 1/K); phi]`.
///
/// Dropout applies only when `training` is set and `p.mode` is
/// [`PhiMode::Dropout`].
pub fn hyper_linear(
    x: &LorentzPoint,
    p: &HyperLinearParams,
    training: bool,
    rng: &mut impl Rng,
) -> Result<LorentzPoint> {
    check_input(x, p.weight.cols())?;
    let phi: Vec<f64> = match p.mode {
        PhiMode::Dropout => {
            let mut xd = x.coords().to_vec();
            if training && p.dropout > 0.0 {
                let keep = 1.0 / (1.0 - p.dropout);
                for c in xd.iter_mut() {
                    *c *= if rng.gen::<f64>() < p.dropout { 0.0 } else { keep };
                }
            }
            matvec(&p.weight, &xd)
        }
        PhiMode::ActivationNorm => {
            let h: Vec<f64> = x.coords().iter().map(|c| c.max(0.0)).collect();
            let z: Vec<f64> = matvec(&p.weight, &h)
                .into_iter()
                .zip(&p.bias)
                .map(|(a, b)| a + b)
                .collect();
            let zn = z.iter().map(|a| a * a).sum::<f64>().sqrt();
            if zn == 0.0 {
                z
            } else {
                let gate = p.scale * crate::sigmoid(dot(&p.v, x.coords()) + p.bias_prime);
                z.iter().map(|a| gate * a / zn).collect()
            }
        }
    };
    if phi.iter().any(|a| !a.is_finite()) {
        return Err(Error::Degenerate("non-finite hyperbolic linear output".into()));
    }
    Ok(LorentzPoint::from_spatial(&phi, *x.config())?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperClassifierParams {
    /// Ambient-length weight, compared to snippets through `<F, W>_L`.
    pub weight: Vec<f64>,
    pub eps: f64,
    pub bias: f64,
}

/// `sigmoid(eps + eps <F, W>_L + b)`.
pub fn hyper_classifier(f: &LorentzPoint, p: &HyperClassifierParams) -> Result<f64> {
    if !(p.eps > 0.0) {
        return Err(Error::Config(format!("eps must be > 0, got {}", p.eps)));
    }
    let ip = lorentz_inner(f.coords(), &p.weight)?;
    Ok(crate::sigmoid(p.eps + p.eps * ip + p.bias))
}

/// Row vector `(-1, 1, ..., 1)` so that `sum(x * y * sign)` is `<x,y>_L`.
pub(crate) fn minkowski_signs(tape: &mut Tape, ambient: usize) -> Var {
    let mut s = vec![1.0; ambient];
    s[0] = -1.0;
    tape.constant(Tensor::row_vector(s))
}

/// `[sqrt(rowsum(phi^2) - 1/K), phi]`.
pub(crate) fn attach_time(tape: &mut Tape, phi: Var, curvature: f64) -> Result<Var> {
    let sq = tape.mul(phi, phi)?;
    let sq = tape.sum_rows(sq);
    let sq = tape.offset(sq, -1.0 / curvature);
    let time = tape.sqrt(sq);
    Ok(tape.concat(time, phi, 1)?)
}

/// Batched [`hyper_linear`]: rows of the input are points in `L^n`.
#[derive(Debug, Clone)]
pub struct HyperLinear {
    /// Stored `(n+1) x m` so rows multiply directly.
    weight: ParamId,
    v: ParamId,
    bias: ParamId,
    bias_prime: ParamId,
    pub scale: f64,
    pub mode: PhiMode,
    pub dropout: f64,
    pub in_dim: usize,
    pub out_dim: usize,
    pub manifold: ManifoldConfig,
}

impl HyperLinear {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        n: usize,
        m: usize,
        mode: PhiMode,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let init = HyperLinearParams::init(n, m, mode, rng);
        Self {
            weight: store.add(format!("{prefix}.weight"), init.weight.transpose()),
            v: store.add(format!("{prefix}.v"), Tensor::column_vector(init.v)),
            bias: store.add(format!("{prefix}.bias"), Tensor::row_vector(init.bias)),
            bias_prime: store.add(format!("{prefix}.bias_prime"), Tensor::scalar(0.0)),
            scale: 1.0,
            mode,
            dropout,
            in_dim: n,
            out_dim: m,
            manifold: ManifoldConfig::default(),
        }
    }

    /// The per-point parameter view of this layer.
    pub fn export(&self, store: &ParamStore) -> HyperLinearParams {
        HyperLinearParams {
            weight: store.get(self.weight).transpose(),
            v: store.get(self.v).data().to_vec(),
            bias: store.get(self.bias).data().to_vec(),
            bias_prime: store.get(self.bias_prime).data()[0],
            scale: self.scale,
            mode: self.mode,
            dropout: self.dropout,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let w = bound[self.weight];
        let phi = match self.mode {
            PhiMode::Dropout => {
                let xd = if training {
                    tape.dropout(x, self.dropout, rng)?
                } else {
                    x
                };
                tape.matmul(xd, w)?
            }
            PhiMode::ActivationNorm => {
                let h = tape.relu(x);
                let z = tape.matmul(h, w)?;
                let z = tape.add(z, bound[self.bias])?;
                let zn = tape.norm_rows(z);
                let zn = tape.offset(zn, f64::MIN_POSITIVE);
                let unit = tape.div(z, zn)?;
                let gate = tape.matmul(x, bound[self.v])?;
                let gate = tape.add(gate, bound[self.bias_prime])?;
                let gate = tape.sigmoid(gate);
                let gate = tape.scale(gate, self.scale);
                tape.mul(unit, gate)?
            }
        };
        if !tape.value(phi).is_finite() {
            return Err(Error::Degenerate("non-finite hyperbolic linear output".into()));
        }
        attach_time(tape, phi, self.manifold.curvature())
    }
}

/// Batched [`hyper_classifier`]; returns a `T x 1` column of scores.
#[derive(Debug, Clone)]
pub struct HyperClassifier {
    weight: ParamId,
    bias: ParamId,
    pub eps: f64,
}

impl HyperClassifier {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, eps: f64, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / ((dim + 1) as f64).sqrt();
        Self {
            weight: store.add_uniform(format!("{prefix}.weight"), dim + 1, 1, bound, rng),
            bias: store.add_zeros(format!("{prefix}.bias"), 1, 1),
            eps,
        }
    }

    pub fn export(&self, store: &ParamStore) -> HyperClassifierParams {
        HyperClassifierParams {
            weight: store.get(self.weight).data().to_vec(),
            eps: self.eps,
            bias: store.get(self.bias).data()[0],
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, f: Var) -> Result<Var> {
        let ambient = tape.value(f).cols();
        let signs = minkowski_signs(tape, ambient);
        let fj = tape.mul(f, signs)?;
        let ip = tape.matmul(fj, bound[self.weight])?;
        let logits = tape.scale(ip, self.eps);
        let logits = tape.offset(logits, self.eps);
        let logits = tape.add(logits, bound[self.bias])?;
        Ok(tape.sigmoid(logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{is_on_manifold, lift_from_euclidean};
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng, n: usize) -> LorentzPoint {
        let e: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        lift_from_euclidean(&e)
    }

    #[test]
    fn f_x_m_zero_spatial_gives_origin() {
        let x = lift_from_euclidean(&[0.4, -0.2]);
        let mut m = Tensor::zeros(3, 3);
        m.row_mut(0).copy_from_slice(&[1.0, 0.5, 0.5]);
        let y = f_x_m(&m, &x).unwrap();
        assert!((y.coords()[0] - 1.0).abs() < 1e-15);
        assert_eq!(&y.coords()[1..], &[0.0, 0.0]);
    }

    #[test]
    fn f_x_m_lands_on_manifold_with_new_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let x = random_point(&mut rng, 4);
            let m = Tensor::from_fn(7, 5, |_, _| rng.gen_range(-1.0..1.0));
            let y = f_x_m(&m, &x).unwrap();
            assert_eq!(y.coords().len(), 7);
            let ip = lorentz_inner(y.coords(), y.coords()).unwrap();
            assert!((ip + 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn f_x_m_rejects_degenerate_direction() {
        let x = LorentzPoint::origin(2, ManifoldConfig::default());
        let mut m = Tensor::zeros(2, 3);
        m.row_mut(0).copy_from_slice(&[0.0, 1.0, 1.0]);
        assert!(matches!(f_x_m(&m, &x), Err(Error::Degenerate(_))));
    }

    #[test]
    fn zero_weight_dropout_mode_gives_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = HyperLinearParams::init(3, 2, PhiMode::Dropout, &mut rng);
        p.weight = Tensor::zeros(2, 4);
        let y = hyper_linear(&random_point(&mut rng, 3), &p, false, &mut rng).unwrap();
        assert_eq!(y.coords(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn activation_norm_output_norm_is_gate() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let mut p = HyperLinearParams::init(5, 3, PhiMode::ActivationNorm, &mut rng);
            p.scale = rng.gen_range(0.1..3.0);
            p.bias_prime = rng.gen_range(-1.0..1.0);
            p.bias = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let x = random_point(&mut rng, 5);
            let y = hyper_linear(&x, &p, true, &mut rng).unwrap();
            let norm = y.spatial().iter().map(|a| a * a).sum::<f64>().sqrt();
            let expect = p.scale * crate::sigmoid(dot(&p.v, x.coords()) + p.bias_prime);
            assert!((norm - expect).abs() < 1e-12);
            assert!(is_on_manifold(y.coords(), &ManifoldConfig::default()));
        }
    }

    #[test]
    fn classifier_values() {
        let f = LorentzPoint::origin(2, ManifoldConfig::default());
        // <o, (0, 1, 0)>_L = 0
        let mut p = HyperClassifierParams {
            weight: vec![0.0, 1.0, 0.0],
            eps: 1.0,
            bias: 0.0,
        };
        assert!((hyper_classifier(&f, &p).unwrap() - 0.731_058_578_630_004_9).abs() < 1e-15);
        p.bias = -1.0;
        assert_eq!(hyper_classifier(&f, &p).unwrap(), 0.5);
        p.weight = vec![1.0, 0.0];
        assert!(hyper_classifier(&f, &p).is_err());
    }

    #[test]
    fn batched_layer_matches_per_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for mode in [PhiMode::Dropout, PhiMode::ActivationNorm] {
            let mut store = ParamStore::new();
            let layer = HyperLinear::new(&mut store, "hl", 4, 3, mode, 0.0, &mut rng);
            let pts: Vec<LorentzPoint> = (0..6).map(|_| random_point(&mut rng, 4)).collect();
            let x = Tensor::from_rows(&pts.iter().map(|p| p.coords().to_vec()).collect::<Vec<_>>())
                .unwrap();
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape, false);
            let xv = tape.constant(x);
            let y = layer.forward(&mut tape, &bound, xv, false, &mut rng).unwrap();
            let p = layer.export(&store);
            for (r, pt) in pts.iter().enumerate() {
                let single = hyper_linear(pt, &p, false, &mut rng).unwrap();
                for (a, b) in tape.value(y).row(r).iter().zip(single.coords()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn layer_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for mode in [PhiMode::Dropout, PhiMode::ActivationNorm] {
            let mut store = ParamStore::new();
            let layer = HyperLinear::new(&mut store, "hl", 3, 4, mode, 0.5, &mut rng);
            let clf = HyperClassifier::new(&mut store, "clf", 4, 1.0, &mut rng);
            let x = Tensor::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
            let mut inputs = store.tensors().to_vec();
            inputs.push(x);
            let report = grad_check(
                |tape, vars| -> Result<Var> {
                    let bound = Bound::from_vars(vars[..vars.len() - 1].to_vec());
                    let p = tape.expmap0_rows(vars[vars.len() - 1]);
                    let mut drop_rng = ChaCha8Rng::seed_from_u64(77);
                    let y = layer.forward(tape, &bound, p, true, &mut drop_rng)?;
                    let s = clf.forward(tape, &bound, y)?;
                    Ok(tape.sum(s))
                },
                &inputs,
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error <= 1e-4, "{mode:?}: {report:?}");
        }
    }
}
