//! Lorentz-model hyperbolic geometry.
//!
//! Points live on the upper sheet of the hyperboloid
//! `{x in R^(n+1) : <x,x>_L = 1/K, x_0 > 0}` with the Minkowski product
//! `<x,y>_L = -x_0 y_0 + sum_i x_i y_i`. Coordinates are stored time-first.
//!
//! All functions here are pure and work at double precision.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("vectors need at least 2 coordinates, got {0}")]
    TooShort(usize),
    #[error("curvature must be strictly negative, got {0}")]
    InvalidCurvature(f64),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("point is off the manifold (residual {residual:e}, x0 = {time})")]
    NotOnManifold { residual: f64, time: f64 },
    #[error("vector is not tangent at the base point (<x,v>_L = {0:e})")]
    NotTangent(f64),
    #[error("points are not on a common sheet (K<x,y>_L = {0})")]
    DisjointSheets(f64),
    #[error("curvature mismatch: {0} vs {1}")]
    CurvatureMismatch(f64, f64),
    #[error("aggregated vector is not timelike (<v,v>_L = {0:e})")]
    NotTimelike(f64),
    #[error("degenerate direction: {0}")]
    Degenerate(&'static str),
    #[error("non-finite value encountered")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Curvature and membership tolerance shared by a family of points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldConfig {
    curvature: f64,
    tol: f64,
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        Self {
            curvature: -1.0,
            tol: 1e-9,
        }
    }
}

impl ManifoldConfig {
    pub fn new(curvature: f64, tol: f64) -> Result<Self> {
        if !(curvature < 0.0) || !curvature.is_finite() {
            return Err(GeometryError::InvalidCurvature(curvature));
        }
        if !(tol > 0.0) {
            return Err(GeometryError::InvalidTolerance(tol));
        }
        Ok(Self { curvature, tol })
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Returns a copy with a different membership tolerance.
    pub fn with_tol(self, tol: f64) -> Result<Self> {
        Self::new(self.curvature, tol)
    }
}

/// Minkowski product `-x0*y0 + sum_{i>=1} xi*yi`.
pub fn lorentz_inner(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(GeometryError::DimensionMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(GeometryError::TooShort(x.len()));
    }
    Ok(minkowski(x, y))
}

#[inline]
pub(crate) fn minkowski(x: &[f64], y: &[f64]) -> f64 {
    let spatial: f64 = x[1..].iter().zip(&y[1..]).map(|(a, b)| a * b).sum();
    spatial - x[0] * y[0]
}

/// Membership test for the upper sheet.
pub fn is_on_manifold(x: &[f64], cfg: &ManifoldConfig) -> bool {
    if x.len() < 2 || x.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let residual = minkowski(x, x) - 1.0 / cfg.curvature;
    residual.abs() <= cfg.tol && x[0] > 0.0
}

/// A point on the upper hyperboloid sheet.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzPoint {
    coords: Vec<f64>,
    config: ManifoldConfig,
}

impl LorentzPoint {
    /// Validates membership before wrapping the coordinates.
    pub fn new(coords: Vec<f64>, config: ManifoldConfig) -> Result<Self> {
        if coords.len() < 2 {
            return Err(GeometryError::TooShort(coords.len()));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if !is_on_manifold(&coords, &config) {
            return Err(GeometryError::NotOnManifold {
                residual: minkowski(&coords, &coords) - 1.0 / config.curvature,
                time: coords[0],
            });
        }
        Ok(Self { coords, config })
    }

    /// Builds a point from its spatial part, solving for the time coordinate.
    /// Always lands on the manifold (up to rounding of the square root).
    pub fn from_spatial(spatial: &[f64], config: ManifoldConfig) -> Result<Self> {
        if spatial.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let sq: f64 = spatial.iter().map(|v| v * v).sum();
        let time = (sq - 1.0 / config.curvature).sqrt();
        let mut coords = Vec::with_capacity(spatial.len() + 1);
        coords.push(time);
        coords.extend_from_slice(spatial);
        Ok(Self { coords, config })
    }

    /// `(sqrt(-1/K), 0, ..., 0)` in an `n`-dimensional model.
    pub fn origin(n: usize, config: ManifoldConfig) -> Self {
        let mut coords = vec![0.0; n + 1];
        coords[0] = (-1.0 / config.curvature).sqrt();
        Self { coords, config }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn spatial(&self) -> &[f64] {
        &self.coords[1..]
    }

    pub fn time(&self) -> f64 {
        self.coords[0]
    }

    /// Intrinsic dimension `n` (ambient is `n + 1`).
    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    pub fn config(&self) -> &ManifoldConfig {
        &self.config
    }

    pub fn residual(&self) -> f64 {
        minkowski(&self.coords, &self.coords) - 1.0 / self.config.curvature
    }
}

/// A vector in the tangent space at `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    base: LorentzPoint,
    coords: Vec<f64>,
}

impl TangentVector {
    pub fn new(base: LorentzPoint, coords: Vec<f64>) -> Result<Self> {
        check_same_len(base.coords(), &coords)?;
        let ip = minkowski(base.coords(), &coords);
        if ip.abs() > tangent_tol(&base, &coords) {
            return Err(GeometryError::NotTangent(ip));
        }
        Ok(Self { base, coords })
    }

    pub fn zero(base: LorentzPoint) -> Self {
        let coords = vec![0.0; base.coords.len()];
        Self { base, coords }
    }

    pub fn base(&self) -> &LorentzPoint {
        &self.base
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    /// `sqrt(<v,v>_L)`; tangent vectors are spacelike so the product is
    /// nonnegative up to rounding.
    pub fn lorentz_norm(&self) -> f64 {
        minkowski(&self.coords, &self.coords).max(0.0).sqrt()
    }
}

fn check_same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(GeometryError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

fn check_same_curvature(a: &LorentzPoint, b: &LorentzPoint) -> Result<()> {
    if a.config.curvature != b.config.curvature {
        return Err(GeometryError::CurvatureMismatch(
            a.config.curvature,
            b.config.curvature,
        ));
    }
    check_same_len(a.coords(), b.coords())
}

// Tangency is checked relative to the coordinate scale; the absolute product
// carries rounding proportional to |x| |v|.
fn tangent_tol(base: &LorentzPoint, v: &[f64]) -> f64 {
    let xs = base.coords.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let vs = v.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    base.config.tol * (1.0f64).max(xs * vs)
}

/// Exponential map at `x`:
/// `cosh(sqrt(-K)|v|) x + sinh(sqrt(-K)|v|) v / (sqrt(-K)|v|)`.
///
/// The time coordinate of the result is re-solved from the spatial part so
/// the output satisfies the membership constraint to rounding.
pub fn exp_map(x: &LorentzPoint, v: &[f64]) -> Result<LorentzPoint> {
    check_same_len(x.coords(), v)?;
    let ip = minkowski(x.coords(), v);
    if ip.abs() > tangent_tol(x, v) {
        return Err(GeometryError::NotTangent(ip));
    }
    let norm = minkowski(v, v).max(0.0).sqrt();
    if norm == 0.0 {
        return Ok(x.clone());
    }
    let scaled = (-x.config.curvature).sqrt() * norm;
    let (c, s) = (scaled.cosh(), scaled.sinh() / scaled);
    let spatial: Vec<f64> = x.coords[1..]
        .iter()
        .zip(&v[1..])
        .map(|(xi, vi)| c * xi + s * vi)
        .collect();
    LorentzPoint::from_spatial(&spatial, x.config)
}

/// Logarithmic map at `x`: `d(x,y) u / |u|_L` with `u = y - K<x,y>_L x`.
///
/// Returns the zero vector when `y == x`.
pub fn log_map(x: &LorentzPoint, y: &LorentzPoint) -> Result<TangentVector> {
    check_same_curvature(x, y)?;
    let k = x.config.curvature;
    let ip = minkowski(x.coords(), y.coords());
    let u: Vec<f64> = y
        .coords
        .iter()
        .zip(&x.coords)
        .map(|(yi, xi)| yi - k * ip * xi)
        .collect();
    let unorm = minkowski(&u, &u).max(0.0).sqrt();
    if unorm == 0.0 {
        return Ok(TangentVector::zero(x.clone()));
    }
    let d = geodesic_distance(x, y)?;
    let coords = u.iter().map(|ui| d * ui / unorm).collect();
    Ok(TangentVector {
        base: x.clone(),
        coords,
    })
}

/// `arccosh(K<x,y>_L)`.
///
/// Evaluated through the Minkowski square of `x - y`, which equals
/// `(2/-K)(K<x,y>_L - 1)` on the manifold but stays accurate when the points
/// are close. Arguments in `[1 - tol, 1)` clamp to zero distance.
pub fn geodesic_distance(x: &LorentzPoint, y: &LorentzPoint) -> Result<f64> {
    check_same_curvature(x, y)?;
    let k = x.config.curvature;
    let arg = k * minkowski(x.coords(), y.coords());
    if arg < 1.0 - x.config.tol {
        return Err(GeometryError::DisjointSheets(arg));
    }
    Ok(arcosh_from_chord(k, x.coords(), y.coords()))
}

/// `arccosh(1 + delta)` with `delta = (-K/2) <x-y, x-y>_L`.
pub(crate) fn arcosh_from_chord(k: f64, x: &[f64], y: &[f64]) -> f64 {
    let mut sq = -(x[0] - y[0]) * (x[0] - y[0]);
    for (a, b) in x[1..].iter().zip(&y[1..]) {
        sq += (a - b) * (a - b);
    }
    let delta = (-0.5 * k * sq).max(0.0);
    (delta + (delta * (delta + 2.0)).sqrt()).ln_1p()
}

/// Lifts a Euclidean vector onto the `K = -1` hyperboloid through the
/// exponential map at the origin: `[cosh|e|, sinh|e| e/|e|]`.
pub fn lift_from_euclidean(e: &[f64]) -> LorentzPoint {
    let cfg = ManifoldConfig::default();
    let r = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 {
        return LorentzPoint::origin(e.len(), cfg);
    }
    let s = r.sinh() / r;
    let spatial: Vec<f64> = e.iter().map(|v| s * v).collect();
    let sq: f64 = spatial.iter().map(|v| v * v).sum();
    let mut coords = Vec::with_capacity(e.len() + 1);
    coords.push((1.0 + sq).sqrt());
    coords.extend(spatial);
    LorentzPoint { coords, config: cfg }
}

/// Inverse of [`lift_from_euclidean`]: the spatial part of `log_o(y)`.
pub fn log_at_origin(y: &LorentzPoint) -> Vec<f64> {
    let sp = y.spatial();
    let r = sp.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 {
        return vec![0.0; sp.len()];
    }
    // On the K = -1 sheet, arccosh(y0) = asinh(|y_s|).
    let s = r.asinh() / r;
    sp.iter().map(|v| s * v).collect()
}

/// Removes the component of `u` along `x`: `u - (<x,u>_L / <x,x>_L) x`.
pub fn project_to_tangent(x: &LorentzPoint, u: &[f64]) -> Result<TangentVector> {
    check_same_len(x.coords(), u)?;
    let xx = minkowski(x.coords(), x.coords());
    let coef = minkowski(x.coords(), u) / xx;
    let coords = u
        .iter()
        .zip(&x.coords)
        .map(|(ui, xi)| ui - coef * xi)
        .collect();
    Ok(TangentVector {
        base: x.clone(),
        coords,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit() -> ManifoldConfig {
        ManifoldConfig::default()
    }

    fn random_point(rng: &mut impl Rng, n: usize, radius: f64) -> LorentzPoint {
        let e: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        let target = rng.gen_range(0.0..radius);
        let e: Vec<f64> = e.iter().map(|v| v * target / r).collect();
        lift_from_euclidean(&e)
    }

    fn random_tangent(rng: &mut impl Rng, x: &LorentzPoint, max_norm: f64) -> Vec<f64> {
        let u: Vec<f64> = (0..x.coords().len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let t = project_to_tangent(x, &u).unwrap();
        let n = t.lorentz_norm();
        let target = rng.gen_range(0.0..max_norm);
        t.coords().iter().map(|c| c * target / n).collect()
    }

    #[test]
    fn inner_product_examples() {
        assert_eq!(lorentz_inner(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(), -1.0);
        let s2 = 2f64.sqrt();
        let v = lorentz_inner(&[s2, 1.0, 0.0], &[s2, 0.0, 1.0]).unwrap();
        assert!((v + 2.0).abs() < 1e-15);
        assert!(matches!(
            lorentz_inner(&[1.0, 0.0], &[1.0, 0.0, 0.0]),
            Err(GeometryError::DimensionMismatch { .. })
        ));
        assert!(matches!(lorentz_inner(&[1.0], &[1.0]), Err(GeometryError::TooShort(1))));
    }

    #[test]
    fn membership_examples() {
        let cfg = unit();
        assert!(is_on_manifold(&[1.0, 0.0, 0.0], &cfg));
        assert!(!is_on_manifold(&[-1.0, 0.0, 0.0], &cfg));
        assert!(!is_on_manifold(&[1.0, 1.0, 0.0], &cfg));
        assert!(LorentzPoint::new(vec![1.0, 1.0, 0.0], cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ManifoldConfig::new(0.0, 1e-9).is_err());
        assert!(ManifoldConfig::new(1.0, 1e-9).is_err());
        assert!(ManifoldConfig::new(-1.0, 0.0).is_err());
        let cfg = ManifoldConfig::new(-2.0, 1e-9).unwrap();
        let o = LorentzPoint::origin(3, cfg);
        assert!((o.time() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(is_on_manifold(o.coords(), &cfg));
    }

    #[test]
    fn exp_map_closed_forms() {
        let o = LorentzPoint::origin(2, unit());
        let same = exp_map(&o, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(same, o);
        let t = 0.7;
        let y = exp_map(&o, &[0.0, t, 0.0]).unwrap();
        assert!((y.coords()[0] - t.cosh()).abs() < 1e-14);
        assert!((y.coords()[1] - t.sinh()).abs() < 1e-14);
        assert_eq!(y.coords()[2], 0.0);
        assert!(matches!(
            exp_map(&o, &[1.0, 0.0, 0.0]),
            Err(GeometryError::NotTangent(_))
        ));
    }

    #[test]
    fn log_map_closed_forms() {
        let o = LorentzPoint::origin(2, unit());
        let y = LorentzPoint::new(vec![1f64.cosh(), 1f64.sinh(), 0.0], unit()).unwrap();
        let v = log_map(&o, &y).unwrap();
        assert!(v.coords()[0].abs() < 1e-14);
        assert!((v.coords()[1] - 1.0).abs() < 1e-14);
        assert!(v.coords()[2].abs() < 1e-14);
        let z = log_map(&y, &y).unwrap();
        assert!(z.coords().iter().all(|c| *c == 0.0));
    }

    #[test]
    fn distance_examples() {
        let o = LorentzPoint::origin(2, unit());
        let y = LorentzPoint::new(vec![1f64.cosh(), 1f64.sinh(), 0.0], unit()).unwrap();
        assert_eq!(geodesic_distance(&o, &o).unwrap(), 0.0);
        assert!((geodesic_distance(&o, &y).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(
            geodesic_distance(&o, &y).unwrap(),
            geodesic_distance(&y, &o).unwrap()
        );
    }

    #[test]
    fn distance_rejects_opposite_sheets() {
        let cfg = unit();
        let o = LorentzPoint::origin(2, cfg);
        // Bypass validation to fabricate a lower-sheet point.
        let lower = LorentzPoint {
            coords: vec![-1.0, 0.0, 0.0],
            config: cfg,
        };
        assert!(matches!(
            geodesic_distance(&o, &lower),
            Err(GeometryError::DisjointSheets(_))
        ));
    }

    #[test]
    fn lift_examples() {
        assert_eq!(lift_from_euclidean(&[0.0, 0.0]).coords(), &[1.0, 0.0, 0.0]);
        let y = lift_from_euclidean(&[1.0, 0.0]);
        assert!((y.coords()[0] - 1f64.cosh()).abs() < 1e-14);
        assert!((y.coords()[1] - 1f64.sinh()).abs() < 1e-14);
        let e = [0.3, -1.2, 0.5];
        let back = log_at_origin(&lift_from_euclidean(&e));
        for (a, b) in e.iter().zip(&back) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn projection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_point(&mut rng, 4, 2.0);
        let t = random_tangent(&mut rng, &x, 3.0);
        let p = project_to_tangent(&x, &t).unwrap();
        for (a, b) in p.coords().iter().zip(&t) {
            assert!((a - b).abs() < 1e-12);
        }
        let z = project_to_tangent(&x, x.coords()).unwrap();
        assert!(z.coords().iter().all(|c| c.abs() < 1e-12));
        for _ in 0..200 {
            let u: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let p = project_to_tangent(&x, &u).unwrap();
            assert!(minkowski(x.coords(), p.coords()).abs() <= 1e-12);
        }
    }

    #[test]
    fn exp_log_roundtrip_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let x = random_point(&mut rng, 5, 2.0);
            let v = random_tangent(&mut rng, &x, 5.0);
            let y = exp_map(&x, &v).unwrap();
            assert!(is_on_manifold(y.coords(), &unit()));
            let back = log_map(&x, &y).unwrap();
            let err = back
                .coords()
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err <= 1e-8, "roundtrip error {err:e}");
            let y2 = exp_map(&x, back.coords()).unwrap();
            let err2 = y2
                .coords()
                .iter()
                .zip(y.coords())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err2 <= 1e-8 * y.time());
        }
    }

    #[test]
    fn triangle_inequality_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let a = random_point(&mut rng, 3, 3.0);
            let b = random_point(&mut rng, 3, 3.0);
            let c = random_point(&mut rng, 3, 3.0);
            let ab = geodesic_distance(&a, &b).unwrap();
            let bc = geodesic_distance(&b, &c).unwrap();
            let ac = geodesic_distance(&a, &c).unwrap();
            assert!(ab >= 0.0);
            assert_eq!(ab, geodesic_distance(&b, &a).unwrap());
            assert!(ac <= ab + bc + 1e-9);
        }
    }
}
