//! Message graphs and aggregation in both spaces.
//!
//! Hyperbolic side: Lorentzian similarity, the Dirichlet energy of a point
//! set, the layer-sensitive association threshold and normalised Lorentz
//! aggregation (the HE-GCN layer). Euclidean side: cosine and temporal
//! adjacencies and a plain GCN layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypernn::{hyper_linear, minkowski_signs, HyperLinear, HyperLinearParams};
use crate::manifold::{arcosh_from_chord, geodesic_distance, minkowski, LorentzPoint};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Semantic,
    Temporal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Hyperbolic,
    Euclidean,
}

/// Dense `T x T` adjacency over the snippets of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageGraph {
    pub adjacency: Tensor,
    pub kind: GraphKind,
    pub space: Space,
    /// 1-based layer index.
    pub layer: usize,
}

impl MessageGraph {
    pub fn size(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn nonzero_count(&self) -> usize {
        self.adjacency.data().iter().filter(|v| **v != 0.0).count()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.size())
            .map(|r| self.adjacency.row(r).iter().sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LshadParams {
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LshadParams {
    fn default() -> Self {
        Self {
            beta: 0.8,
            gamma: 1.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalParams {
    pub sigma: f64,
}

impl Default for TemporalParams {
    fn default() -> Self {
        Self {
            sigma: std::f64::consts::E,
        }
    }
}

/// How the per-layer edge-keeping threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// `lshad(E, k)`, recomputed from the layer's energy.
    Lshad(LshadParams),
    /// The same constant at every layer.
    Fixed(f64),
}

impl ThresholdRule {
    pub fn threshold(&self, energy: f64, layer: usize) -> f64 {
        match self {
            Self::Lshad(p) => lshad(energy, layer, p),
            Self::Fixed(t) => *t,
        }
    }
}

/// `exp(-d(x, y))`.
pub fn lorentz_similarity(x: &LorentzPoint, y: &LorentzPoint) -> Result<f64> {
    Ok((-geodesic_distance(x, y)?).exp())
}

/// Pairwise `exp(-d)` over a point set.
pub fn similarity_matrix(points: &[LorentzPoint]) -> Result<Tensor> {
    let n = points.len();
    let mut s = Tensor::identity(n);
    for i in 0..n {
        for j in i + 1..n {
            let v = lorentz_similarity(&points[i], &points[j])?;
            s.set(i, j, v);
            s.set(j, i, v);
        }
    }
    Ok(s)
}

/// Numerically stable row softmax.
pub fn row_softmax(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for r in 0..t.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Row softmax of the Lorentzian-similarity matrix.
pub fn semantic_adjacency(points: &[LorentzPoint]) -> Result<MessageGraph> {
    if points.is_empty() {
        return Err(Error::Contract("semantic adjacency needs T >= 1".into()));
    }
    Ok(MessageGraph {
        adjacency: row_softmax(&similarity_matrix(points)?),
        kind: GraphKind::Semantic,
        space: Space::Hyperbolic,
        layer: 1,
    })
}

/// `A[i][j] = exp(-|i - j| / sigma)`.
pub fn temporal_adjacency(t: usize, p: &TemporalParams) -> MessageGraph {
    MessageGraph {
        adjacency: Tensor::from_fn(t, t, |i, j| (-(i.abs_diff(j) as f64) / p.sigma).exp()),
        kind: GraphKind::Temporal,
        space: Space::Euclidean,
        layer: 1,
    }
}

/// `1/2 sum_{i,j} d(x_i, x_j)^2` over a fully connected graph.
pub fn hyperbolic_dirichlet_energy(points: &[LorentzPoint]) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = geodesic_distance(&points[i], &points[j])?;
            total += d * d;
        }
    }
    Ok(total)
}

/// Degree-normalised form: each point is pulled toward the origin by
/// `exp_o(log_o(x_i) / sqrt(1 + deg_i))` before measuring distances.
/// Not used by the model; fully connected graphs use
/// [`hyperbolic_dirichlet_energy`].
pub fn hyperbolic_dirichlet_energy_with_degrees(
    points: &[LorentzPoint],
    degrees: &[f64],
) -> Result<f64> {
    if points.len() != degrees.len() {
        return Err(Error::Contract(format!(
            "{} points but {} degrees",
            points.len(),
            degrees.len()
        )));
    }
    let cfg = points.first().map(|p| *p.config()).unwrap_or_default();
    let scaled = points
        .iter()
        .zip(degrees)
        .map(|(p, d)| {
            let o = LorentzPoint::origin(p.dim(), cfg);
            let v = crate::manifold::log_map(&o, p)?;
            let f = 1.0 / (1.0 + d).sqrt();
            let w: Vec<f64> = v.coords().iter().map(|c| c * f).collect();
            crate::manifold::exp_map(&o, &w)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    hyperbolic_dirichlet_energy(&scaled)
}

/// Energy of the rows of a `T x (n+1)` matrix of `K = -1` points.
pub(crate) fn energy_of_rows(points: &Tensor, curvature: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..points.rows() {
        for j in i + 1..points.rows() {
            let d = arcosh_from_chord(curvature, points.row(i), points.row(j));
            total += d * d;
        }
    }
    total
}

/// Layer-sensitive association degree `sigmoid(beta k - gamma + 1/(E + 1))`.
pub fn lshad(energy: f64, layer: usize, p: &LshadParams) -> f64 {
    crate::sigmoid(p.beta * layer as f64 - p.gamma + 1.0 / (energy + 1.0))
}

/// Zeroes every entry below `theta`; kept entries are not renormalised.
pub fn apply_lshad_rule(g: &MessageGraph, theta: f64) -> MessageGraph {
    MessageGraph {
        adjacency: g.adjacency.map(|v| if v >= theta { v } else { 0.0 }),
        ..g.clone()
    }
}

/// Gives every all-zero row a unit self-loop.
pub fn with_isolated_self_loops(g: &MessageGraph) -> MessageGraph {
    let mut out = g.clone();
    for r in 0..out.size() {
        if out.adjacency.row(r).iter().all(|v| *v == 0.0) {
            out.adjacency.set(r, r, 1.0);
        }
    }
    out
}

/// `MA(y_i) = sum_j A_ij y_j / (sqrt(-K) |<v_i, v_i>_L|^(1/2))`.
pub fn hyperbolic_aggregate(g: &MessageGraph, points: &[LorentzPoint]) -> Result<Vec<LorentzPoint>> {
    if g.size() != points.len() {
        return Err(Error::Contract(format!(
            "graph over {} nodes, {} points",
            g.size(),
            points.len()
        )));
    }
    let Some(first) = points.first() else {
        return Ok(Vec::new());
    };
    let cfg = *first.config();
    let ambient = first.coords().len();
    let sk = (-cfg.curvature()).sqrt();
    let mut out = Vec::with_capacity(points.len());
    for i in 0..points.len() {
        let row = g.adjacency.row(i);
        if row.iter().all(|v| *v == 0.0) {
            return Err(Error::IsolatedNode(i));
        }
        let mut v = vec![0.0; ambient];
        for (w, p) in row.iter().zip(points) {
            if *w != 0.0 {
                for (acc, c) in v.iter_mut().zip(p.coords()) {
                    *acc += w * c;
                }
            }
        }
        let ip = minkowski(&v, &v);
        if !(ip < 0.0) {
            return Err(crate::manifold::GeometryError::NotTimelike(ip).into());
        }
        let denom = sk * ip.abs().sqrt();
        let coords: Vec<f64> = v.iter().map(|c| c / denom).collect();
        out.push(LorentzPoint::new(coords, cfg)?);
    }
    Ok(out)
}

/// Diagnostics from one HE-GCN layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub layer: usize,
    pub energy: f64,
    pub threshold: f64,
    /// Edges surviving the threshold (self-loops included).
    pub kept: usize,
}

#[derive(Debug, Clone)]
pub struct HeGcnStep {
    pub points: Vec<LorentzPoint>,
    /// Thresholded adjacency actually used for aggregation.
    pub graph: MessageGraph,
    pub trace: LayerTrace,
}

/// One HE-GCN layer on a point set: transform, build the semantic graph,
/// threshold it at the layer's association degree, aggregate.
///
/// The threshold is compared against the Lorentzian similarity of each pair;
/// surviving pairs keep their softmax weight. Nodes left without neighbours
/// keep a self-loop.
pub fn he_gcn_layer(
    points: &[LorentzPoint],
    layer: usize,
    linear: &HyperLinearParams,
    rule: &ThresholdRule,
    training: bool,
    rng: &mut impl Rng,
) -> Result<HeGcnStep> {
    if layer == 0 {
        return Err(Error::Contract("layer index is 1-based".into()));
    }
    let transformed = points
        .iter()
        .map(|p| hyper_linear(p, linear, training, rng))
        .collect::<Result<Vec<_>>>()?;
    let sim = similarity_matrix(&transformed)?;
    let energy = hyperbolic_dirichlet_energy(&transformed)?;
    let threshold = rule.threshold(energy, layer);
    let mut graph = MessageGraph {
        adjacency: row_softmax(&sim),
        kind: GraphKind::Semantic,
        space: Space::Hyperbolic,
        layer,
    };
    let sim_graph = MessageGraph {
        adjacency: sim,
        ..graph.clone()
    };
    let keep = apply_lshad_rule(&sim_graph, threshold);
    for (a, s) in graph
        .adjacency
        .data_mut()
        .iter_mut()
        .zip(keep.adjacency.data())
    {
        if *s == 0.0 {
            *a = 0.0;
        }
    }
    let graph = with_isolated_self_loops(&graph);
    let out = hyperbolic_aggregate(&graph, &transformed)?;
    let kept = graph.nonzero_count();
    Ok(HeGcnStep {
        points: out,
        graph,
        trace: LayerTrace {
            layer,
            energy,
            threshold,
            kept,
        },
    })
}

/// Row softmax of `max(0, cos(x_i, x_j))`; zero rows have similarity 0 to all.
pub fn euclid_cosine_adjacency(x: &Tensor) -> MessageGraph {
    let norms: Vec<f64> = (0..x.rows())
        .map(|r| x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let cos = Tensor::from_fn(x.rows(), x.rows(), |i, j| {
        if norms[i] == 0.0 || norms[j] == 0.0 {
            return 0.0;
        }
        let d: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum();
        (d / (norms[i] * norms[j])).max(0.0)
    });
    MessageGraph {
        adjacency: row_softmax(&cos),
        kind: GraphKind::Semantic,
        space: Space::Euclidean,
        layer: 1,
    }
}

/// `relu(A X W)`.
pub fn gcn_layer(x: &Tensor, g: &MessageGraph, w: &Tensor) -> Result<Tensor> {
    let ax = g.adjacency.matmul(x)?;
    Ok(ax.matmul(w)?.map(|v| v.max(0.0)))
}

// ---------------------------------------------------------------------------
// Tape versions. Rows of a `T x (n+1)` variable are points on the K = -1
// sheet unless stated otherwise.

/// Pairwise `exp(-d)` between the rows of `a` and `b` (both on the sheet).
/// With `same_set`, the diagonal is pinned to exactly 1 with no gradient.
pub fn lorentz_similarity_var(tape: &mut Tape, a: Var, b: Var, curvature: f64, same_set: bool) -> Result<Var> {
    let ambient = tape.value(a).cols();
    let signs = minkowski_signs(tape, ambient);
    let aj = tape.mul(a, signs)?;
    let bt = tape.transpose(b);
    let inner = tape.matmul(aj, bt)?;
    let arg = tape.scale(inner, curvature);
    let mut dist = tape.arccosh(arg)?;
    if same_set {
        let n = tape.value(dist).rows();
        let off = tape.constant(Tensor::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }));
        dist = tape.mul(dist, off)?;
    }
    let neg = tape.neg(dist);
    Ok(tape.exp(neg))
}

/// Pairwise cosine similarity between the rows of `a` and `b`.
pub fn cosine_similarity_var(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let unit = |tape: &mut Tape, x: Var| -> Result<Var> {
        let n = tape.norm_rows(x);
        let n = tape.offset(n, f64::MIN_POSITIVE);
        Ok(tape.div(x, n)?)
    };
    let ua = unit(tape, a)?;
    let ub = unit(tape, b)?;
    let ubt = tape.transpose(ub);
    Ok(tape.matmul(ua, ubt)?)
}

/// Row softmax of relu'd cosine similarities of the rows of `x`.
pub fn cosine_adjacency_var(tape: &mut Tape, x: Var) -> Result<Var> {
    let c = cosine_similarity_var(tape, x, x)?;
    let c = tape.relu(c);
    Ok(tape.softmax_rows(c))
}

/// Batched [`hyperbolic_aggregate`].
pub fn hyperbolic_aggregate_var(tape: &mut Tape, adjacency: Var, points: Var, curvature: f64) -> Result<Var> {
    let a = tape.value(adjacency);
    if let Some(r) = (0..a.rows()).find(|&r| a.row(r).iter().all(|v| *v == 0.0)) {
        return Err(Error::IsolatedNode(r));
    }
    let v = tape.matmul(adjacency, points)?;
    let ambient = tape.value(v).cols();
    let signs = minkowski_signs(tape, ambient);
    let sq = tape.mul(v, v)?;
    let sq = tape.mul(sq, signs)?;
    let ip = tape.sum_rows(sq);
    if let Some(&bad) = tape.value(ip).data().iter().find(|x| !(**x < 0.0)) {
        return Err(crate::manifold::GeometryError::NotTimelike(bad).into());
    }
    let norm = tape.abs(ip);
    let norm = tape.sqrt(norm);
    let norm = tape.scale(norm, (-curvature).sqrt());
    Ok(tape.div(v, norm)?)
}

/// Stacked HE-GCN layers over a shared threshold rule.
#[derive(Debug, Clone)]
pub struct HeGcn {
    pub layers: Vec<HyperLinear>,
    pub rule: ThresholdRule,
}

impl HeGcn {
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        points: Var,
        training: bool,
        rng: &mut impl Rng,
        trace: &mut Vec<LayerTrace>,
    ) -> Result<Var> {
        let mut x = points;
        for (i, layer) in self.layers.iter().enumerate() {
            let k = i + 1;
            let curvature = layer.manifold.curvature();
            let y = layer.forward(tape, bound, x, training, rng)?;
            let sim = lorentz_similarity_var(tape, y, y, curvature, true)?;
            let adj = tape.softmax_rows(sim);
            let energy = energy_of_rows(tape.value(y), curvature);
            let threshold = self.rule.threshold(energy, k);
            let s = tape.value(sim);
            let n = s.rows();
            let mut mask = s.map(|v| if v >= threshold { 1.0 } else { 0.0 });
            for r in 0..n {
                if mask.row(r).iter().all(|v| *v == 0.0) {
                    mask.set(r, r, 1.0);
                }
            }
            let kept = mask.data().iter().filter(|v| **v != 0.0).count();
            let mask = tape.constant(mask);
            let adj = tape.mul(adj, mask)?;
            x = hyperbolic_aggregate_var(tape, adj, y, curvature)?;
            trace.push(LayerTrace {
                layer: k,
                energy,
                threshold,
                kept,
            });
        }
        Ok(x)
    }
}

/// Hyperbolic layers aggregated over a fixed (e.g. temporal) adjacency.
#[derive(Debug, Clone)]
pub struct FixedGraphHgcn {
    pub layers: Vec<HyperLinear>,
}

impl FixedGraphHgcn {
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        adjacency: Var,
        points: Var,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let mut x = points;
        for layer in &self.layers {
            let y = layer.forward(tape, bound, x, training, rng)?;
            x = hyperbolic_aggregate_var(tape, adjacency, y, layer.manifold.curvature())?;
        }
        Ok(x)
    }
}

/// Stacked `relu(A X W)` layers sharing one adjacency.
#[derive(Debug, Clone)]
pub struct Gcn {
    pub weights: Vec<ParamId>,
}

impl Gcn {
    /// Layer widths `dims[0] -> dims[1] -> ...`, Glorot-uniform weights.
    pub fn new(store: &mut ParamStore, prefix: &str, dims: &[usize], rng: &mut impl Rng) -> Self {
        let weights = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
                store.add_uniform(format!("{prefix}.{i}.weight"), w[0], w[1], bound, rng)
            })
            .collect();
        Self { weights }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, adjacency: Var, x: Var) -> Result<Var> {
        let mut h = x;
        for w in &self.weights {
            let ah = tape.matmul(adjacency, h)?;
            let z = tape.matmul(ah, bound[*w])?;
            h = tape.relu(z);
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypernn::PhiMode;
    use crate::manifold::{is_on_manifold, lift_from_euclidean, ManifoldConfig};
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, t: usize, n: usize, spread: f64) -> Vec<LorentzPoint> {
        let center: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        (0..t)
            .map(|_| {
                let e: Vec<f64> = center
                    .iter()
                    .map(|c| c + rng.gen_range(-spread..spread))
                    .collect();
                lift_from_euclidean(&e)
            })
            .collect()
    }

    fn as_matrix(points: &[LorentzPoint]) -> Tensor {
        Tensor::from_rows(&points.iter().map(|p| p.coords().to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn similarity_values() {
        let o = LorentzPoint::origin(2, ManifoldConfig::default());
        let y = LorentzPoint::new(vec![1f64.cosh(), 1f64.sinh(), 0.0], ManifoldConfig::default()).unwrap();
        assert_eq!(lorentz_similarity(&o, &o).unwrap(), 1.0);
        assert!((lorentz_similarity(&o, &y).unwrap() - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(
            lorentz_similarity(&o, &y).unwrap(),
            lorentz_similarity(&y, &o).unwrap()
        );
    }

    #[test]
    fn semantic_adjacency_cases() {
        let p = lift_from_euclidean(&[0.3, 0.1]);
        let g = semantic_adjacency(&[p.clone(), p.clone(), p.clone(), p.clone()]).unwrap();
        assert!(g.adjacency.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
        let one = semantic_adjacency(&[p.clone()]).unwrap();
        assert_eq!(one.adjacency.data(), &[1.0]);
        assert!(semantic_adjacency(&[]).is_err());

        // Brute force against direct distances.
        let pts = [
            lift_from_euclidean(&[0.0, 0.0]),
            lift_from_euclidean(&[1.0, 0.0]),
            lift_from_euclidean(&[0.2, -0.7]),
        ];
        let g = semantic_adjacency(&pts).unwrap();
        for i in 0..3 {
            let sims: Vec<f64> = (0..3)
                .map(|j| {
                    if i == j {
                        return 1.0;
                    }
                    let ip = -minkowski(pts[i].coords(), pts[j].coords());
                    (-ip.max(1.0).acosh()).exp()
                })
                .collect();
            let z: f64 = sims.iter().map(|s| s.exp()).sum();
            for j in 0..3 {
                assert!((g.adjacency.get(i, j) - sims[j].exp() / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn temporal_values() {
        let p = TemporalParams::default();
        let g = temporal_adjacency(5, &p);
        assert_eq!(g.adjacency.get(2, 2), 1.0);
        assert!((g.adjacency.get(0, 1) - (-1.0 / std::f64::consts::E).exp()).abs() < 1e-15);
        assert!((g.adjacency.get(0, 1) - 0.692_200_627_555_346_3).abs() < 1e-12);
        let g = temporal_adjacency(5, &TemporalParams { sigma: 2.0 });
        assert!((g.adjacency.get(1, 3) - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(g.adjacency, g.adjacency.transpose());
    }

    #[test]
    fn energy_cases() {
        let p = lift_from_euclidean(&[0.5, 0.5]);
        assert_eq!(hyperbolic_dirichlet_energy(&[p.clone(), p.clone(), p.clone()]).unwrap(), 0.0);
        let q = lift_from_euclidean(&[-0.5, 1.0]);
        let d = geodesic_distance(&p, &q).unwrap();
        assert!((hyperbolic_dirichlet_energy(&[p.clone(), q.clone()]).unwrap() - d * d).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = cloud(&mut rng, 5, 3, 1.0);
        let mut brute = 0.0;
        for a in &pts {
            for b in &pts {
                brute += geodesic_distance(a, b).unwrap().powi(2);
            }
        }
        assert!((hyperbolic_dirichlet_energy(&pts).unwrap() - 0.5 * brute).abs() < 1e-12);
        assert!((energy_of_rows(&as_matrix(&pts), -1.0) - 0.5 * brute).abs() < 1e-12);
    }

    #[test]
    fn lshad_values_and_monotonicity() {
        let p = LshadParams::default();
        assert!((lshad(0.0, 1, &p) - crate::sigmoid(0.6)).abs() < 1e-15);
        assert!((lshad(0.0, 1, &p) - 0.645_656_306_225_795).abs() < 1e-12);
        assert!((lshad(1e300, 1, &p) - 0.401_312_339_887_548_2).abs() < 1e-12);
        assert!(lshad(0.0, 60, &p) > 1.0 - 1e-12);
        for k in 1..20 {
            for e in [0.0, 0.1, 1.0, 10.0, 1e3] {
                assert!(lshad(e, k + 1, &p) > lshad(e, k, &p));
                assert!(lshad(e * 2.0 + 0.5, k, &p) < lshad(e, k, &p));
            }
        }
    }

    #[test]
    fn lshad_rule_cases() {
        let g = MessageGraph {
            adjacency: Tensor::from_rows(&[
                vec![0.5, 0.2, 0.3],
                vec![0.1, 0.6, 0.3],
                vec![0.35, 0.35, 0.3],
            ])
            .unwrap(),
            kind: GraphKind::Semantic,
            space: Space::Hyperbolic,
            layer: 1,
        };
        assert_eq!(apply_lshad_rule(&g, 0.1), g);
        assert_eq!(apply_lshad_rule(&g, 0.7).nonzero_count(), 0);
        let t = apply_lshad_rule(&g, 0.3);
        for (a, b) in t.adjacency.data().iter().zip(g.adjacency.data()) {
            assert_eq!(*a, if *b >= 0.3 { *b } else { 0.0 });
        }
        let mut last = usize::MAX;
        for k in 0..=20 {
            let c = apply_lshad_rule(&g, k as f64 / 20.0).nonzero_count();
            assert!(c <= last);
            last = c;
        }
        let fixed = with_isolated_self_loops(&apply_lshad_rule(&g, 0.7));
        assert_eq!(fixed.adjacency, Tensor::identity(3));
    }

    #[test]
    fn aggregate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = cloud(&mut rng, 4, 3, 1.0);
        let id = MessageGraph {
            adjacency: Tensor::identity(4),
            kind: GraphKind::Semantic,
            space: Space::Hyperbolic,
            layer: 1,
        };
        let out = hyperbolic_aggregate(&id, &pts).unwrap();
        for (a, b) in out.iter().zip(&pts) {
            for (x, y) in a.coords().iter().zip(b.coords()) {
                assert!((x - y).abs() < 1e-14);
            }
        }
        let p = pts[0].clone();
        let g = MessageGraph {
            adjacency: Tensor::from_rows(&[vec![0.3, 0.7], vec![0.5, 0.5]]).unwrap(),
            ..id.clone()
        };
        let out = hyperbolic_aggregate(&g, &[p.clone(), p.clone()]).unwrap();
        for q in out {
            for (x, y) in q.coords().iter().zip(p.coords()) {
                assert!((x - y).abs() < 1e-14);
            }
        }
        let mut z = id.clone();
        z.adjacency.set(2, 2, 0.0);
        assert!(matches!(hyperbolic_aggregate(&z, &pts), Err(Error::IsolatedNode(2))));
    }

    #[test]
    fn aggregate_outputs_on_manifold_and_tape_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let pts = cloud(&mut rng, 6, 4, 1.5);
            let raw = Tensor::from_fn(6, 6, |_, _| rng.gen_range(0.0..1.0));
            let g = MessageGraph {
                adjacency: row_softmax(&raw),
                kind: GraphKind::Semantic,
                space: Space::Hyperbolic,
                layer: 1,
            };
            let out = hyperbolic_aggregate(&g, &pts).unwrap();
            for p in &out {
                assert!(is_on_manifold(p.coords(), &ManifoldConfig::default()));
            }
            let mut tape = Tape::new();
            let a = tape.constant(g.adjacency.clone());
            let y = tape.constant(as_matrix(&pts));
            let agg = hyperbolic_aggregate_var(&mut tape, a, y, -1.0).unwrap();
            assert!(tape.value(agg).max_abs_diff(&as_matrix(&out)) < 1e-12);
        }
    }

    #[test]
    fn he_gcn_single_node_is_identity_aggregation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lin = HyperLinearParams::init(3, 3, PhiMode::ActivationNorm, &mut rng);
        let p = lift_from_euclidean(&[0.2, 0.1, -0.4]);
        let step = he_gcn_layer(&[p.clone()], 1, &lin, &ThresholdRule::Lshad(Default::default()), false, &mut rng)
            .unwrap();
        let direct = hyper_linear(&p, &lin, false, &mut rng).unwrap();
        for (a, b) in step.points[0].coords().iter().zip(direct.coords()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(step.trace.kept, 1);
    }

    #[test]
    fn he_gcn_thresholds_rise_when_energy_falls() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let rule = ThresholdRule::Lshad(Default::default());
        let mut checked = 0;
        for _ in 0..20 {
            let pts = cloud(&mut rng, 12, 4, 0.6);
            let l1 = HyperLinearParams::init(4, 4, PhiMode::ActivationNorm, &mut rng);
            let l2 = HyperLinearParams::init(4, 4, PhiMode::ActivationNorm, &mut rng);
            let s1 = he_gcn_layer(&pts, 1, &l1, &rule, false, &mut rng).unwrap();
            let s2 = he_gcn_layer(&s1.points, 2, &l2, &rule, false, &mut rng).unwrap();
            for p in s1.points.iter().chain(&s2.points) {
                assert!(is_on_manifold(p.coords(), &ManifoldConfig::default()));
            }
            if s2.trace.energy <= s1.trace.energy {
                assert!(s2.trace.threshold >= s1.trace.threshold);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn tape_he_gcn_matches_per_point_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut store = ParamStore::new();
        let layers = vec![
            HyperLinear::new(&mut store, "l1", 4, 3, PhiMode::ActivationNorm, 0.0, &mut rng),
            HyperLinear::new(&mut store, "l2", 3, 3, PhiMode::ActivationNorm, 0.0, &mut rng),
        ];
        let rule = ThresholdRule::Lshad(Default::default());
        let net = HeGcn { layers, rule };
        let pts = cloud(&mut rng, 7, 4, 0.4);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = tape.constant(as_matrix(&pts));
        let mut trace = Vec::new();
        let y = net.forward(&mut tape, &bound, x, false, &mut rng, &mut trace).unwrap();

        let mut cur = pts;
        for (k, layer) in net.layers.iter().enumerate() {
            let step = he_gcn_layer(&cur, k + 1, &layer.export(&store), &rule, false, &mut rng).unwrap();
            assert!((step.trace.energy - trace[k].energy).abs() < 1e-9 * (1.0 + trace[k].energy));
            assert_eq!(step.trace.kept, trace[k].kept);
            cur = step.points;
        }
        assert!(tape.value(y).max_abs_diff(&as_matrix(&cur)) < 1e-10);
    }

    #[test]
    fn cosine_adjacency_cases() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let g = euclid_cosine_adjacency(&x);
        assert!(g.adjacency.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let o = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let g = euclid_cosine_adjacency(&o);
        let e = std::f64::consts::E;
        assert!((g.adjacency.get(0, 0) - e / (e + 1.0)).abs() < 1e-15);
        assert!((g.adjacency.get(0, 1) - 1.0 / (e + 1.0)).abs() < 1e-15);
        let mut scaled = o.clone();
        scaled.row_mut(1).iter_mut().for_each(|v| *v *= 7.5);
        assert!(euclid_cosine_adjacency(&scaled).adjacency.max_abs_diff(&g.adjacency) < 1e-15);
        let z = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert!((euclid_cosine_adjacency(&z).adjacency.get(0, 1) - 0.5).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = Tensor::from_fn(5, 3, |_, _| rng.gen_range(-1.0..1.0));
        let mut tape = Tape::new();
        let xv = tape.constant(r.clone());
        let a = cosine_adjacency_var(&mut tape, xv).unwrap();
        assert!(tape.value(a).max_abs_diff(&euclid_cosine_adjacency(&r).adjacency) < 1e-14);
    }

    #[test]
    fn gcn_cases() {
        let x = Tensor::from_rows(&[vec![1.0, 0.5], vec![0.0, 2.0]]).unwrap();
        let id = MessageGraph {
            adjacency: Tensor::identity(2),
            kind: GraphKind::Temporal,
            space: Space::Euclidean,
            layer: 1,
        };
        assert_eq!(gcn_layer(&x, &id, &Tensor::identity(2)).unwrap(), x);
        assert!(gcn_layer(&Tensor::zeros(2, 2), &id, &Tensor::identity(2))
            .unwrap()
            .data()
            .iter()
            .all(|v| *v == 0.0));
        assert!(gcn_layer(&x, &id, &Tensor::identity(3)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Tensor::from_fn(3, 3, |_, _| rng.gen_range(0.0..1.0));
        let xx = Tensor::from_fn(3, 4, |_, _| rng.gen_range(-1.0..1.0));
        let w = Tensor::from_fn(4, 2, |_, _| rng.gen_range(-1.0..1.0));
        let g = MessageGraph { adjacency: a.clone(), ..id };
        let out = gcn_layer(&xx, &g, &w).unwrap();
        for i in 0..3 {
            for o in 0..2 {
                let mut s = 0.0;
                for j in 0..3 {
                    for k in 0..4 {
                        s += a.get(i, j) * xx.get(j, k) * w.get(k, o);
                    }
                }
                assert!((out.get(i, o) - s.max(0.0)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn graph_layer_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut store = ParamStore::new();
        let layers = vec![
            HyperLinear::new(&mut store, "l1", 3, 3, PhiMode::ActivationNorm, 0.0, &mut rng),
            HyperLinear::new(&mut store, "l2", 3, 3, PhiMode::ActivationNorm, 0.0, &mut rng),
        ];
        let net = HeGcn {
            layers,
            rule: ThresholdRule::Lshad(Default::default()),
        };
        let gcn = Gcn::new(&mut store, "gcn", &[3, 4], &mut rng);
        let x = Tensor::from_fn(4, 3, |_, _| rng.gen_range(-0.8..0.8));
        let mut inputs = store.tensors().to_vec();
        inputs.push(x);
        let np = store.len();
        let report = grad_check(
            |tape, vars| -> Result<Var> {
                let bound = Bound::from_vars(vars[..np].to_vec());
                let e = vars[np];
                let p = tape.expmap0_rows(e);
                let mut tr = Vec::new();
                let mut r = ChaCha8Rng::seed_from_u64(0);
                let h = net.forward(tape, &bound, p, false, &mut r, &mut tr)?;
                let t = tape.logmap0_rows(h)?;
                let adj = cosine_adjacency_var(tape, e)?;
                let g = gcn.forward(tape, &bound, adj, e)?;
                let s1 = tape.sum(g);
                let sq = tape.mul(t, t)?;
                let s2 = tape.sum(sq);
                Ok(tape.add(s1, s2)?)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }
}
