//! Invariant suites run by `dsrl selftest` and the acceptance target:
//! manifold membership, exp/log roundtrip, matrix adaptation, LSHAD values
//! and monotonicity, energy monotonicity under aggregation, gradient checks
//! and metric oracles.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{average_precision, roc_auc, synth_generate, SynthSpec};
use crate::dsi::{Dsi, DsiConfig};
use crate::graphs::{
    apply_lshad_rule, hyperbolic_aggregate, hyperbolic_dirichlet_energy, lshad, semantic_adjacency,
    temporal_adjacency, with_isolated_self_loops, FixedGraphHgcn, Gcn, HeGcn, LshadParams, TemporalParams,
    ThresholdRule,
};
use crate::hypernn::{f_x_m, hyper_linear, HyperClassifier, HyperLinear, HyperLinearParams, PhiMode};
use crate::manifold::{exp_map, lift_from_euclidean, log_map, minkowski, project_to_tangent, LorentzPoint};
use crate::params::{Bound, ParamStore};
use crate::pipeline::{bce_loss_var, Model, ModelConfig};
use crate::tensor::{grad_check, Tape, Tensor, Var};

/// Deliberate defects used to show that the suites catch them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Adds `1e-6` to the time coordinate of every `exp_map` result.
    PerturbExpMap,
}

#[derive(Debug, Clone)]
pub struct SelftestOptions {
    pub seed: u64,
    /// Random draws per membership check.
    pub membership_draws: usize,
    pub roundtrip_draws: usize,
    /// Point sets sampled by the energy suite.
    pub energy_sets: usize,
    pub fault: Option<Fault>,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            membership_draws: 10_000,
            roundtrip_draws: 1_000,
            energy_sets: 100,
            fault: None,
        }
    }
}

/// One named check: how many cases ran, the worst error seen and the bound
/// it was held to.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub count: usize,
    pub failures: usize,
    pub worst: f64,
    pub limit: f64,
    pub passed: bool,
    /// Failure notes, capped at a few entries.
    pub notes: Vec<String>,
}

impl CheckResult {
    fn new(name: &str, limit: f64) -> Self {
        Self {
            name: name.to_string(),
            count: 0,
            failures: 0,
            worst: 0.0,
            limit,
            passed: true,
            notes: Vec::new(),
        }
    }

    /// Records one case with error `err`; NaN counts as a failure.
    fn record(&mut self, err: f64) {
        self.count += 1;
        if !(err <= self.limit) {
            self.failures += 1;
            self.passed = false;
        }
        if err.is_nan() || err > self.worst {
            self.worst = err;
        }
    }

    fn fail(&mut self, note: String) {
        self.count += 1;
        self.failures += 1;
        self.passed = false;
        self.worst = f64::INFINITY;
        self.note(note);
    }

    fn note(&mut self, note: String) {
        if self.notes.len() < 5 {
            self.notes.push(note);
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub checks: Vec<CheckResult>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn timed(name: &str, start: Instant, checks: Vec<CheckResult>) -> Self {
        Self {
            name: name.to_string(),
            checks,
            seconds: start.elapsed().as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SelftestReport {
    pub suites: Vec<SuiteReport>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteReport::passed)
    }

    pub fn suite(&self, name: &str) -> Option<&SuiteReport> {
        self.suites.iter().find(|s| s.name == name)
    }

    /// Names of failing checks as `suite/check`.
    pub fn failures(&self) -> Vec<String> {
        self.suites
            .iter()
            .flat_map(|s| {
                s.checks
                    .iter()
                    .filter(|c| !c.passed)
                    .map(move |c| format!("{}/{}", s.name, c.name))
            })
            .collect()
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.suites {
            let cases: usize = s.checks.iter().map(|c| c.count).sum();
            writeln!(
                f,
                "suite {:<17} {} checks, {} cases, {:.2}s: {}",
                s.name,
                s.checks.len(),
                cases,
                s.seconds,
                if s.passed() { "PASS" } else { "FAIL" }
            )?;
            for c in &s.checks {
                writeln!(
                    f,
                    "  {} {:<28} n={:<6} failures={:<4} worst={:.3e} limit={:.1e}",
                    if c.passed { "pass" } else { "FAIL" },
                    c.name,
                    c.count,
                    c.failures,
                    c.worst,
                    c.limit
                )?;
                for n in &c.notes {
                    writeln!(f, "       {n}")?;
                }
            }
        }
        let failures = self.failures();
        if failures.is_empty() {
            write!(f, "all {} suites passed", self.suites.len())
        } else {
            write!(f, "failed: {}", failures.join(", "))
        }
    }
}

pub fn run_selftest(opts: &SelftestOptions) -> SelftestReport {
    let suites = vec![
        membership_suite(opts),
        roundtrip_suite(opts),
        matrix_adaptation_suite(opts),
        lshad_suite(),
        energy_suite(opts),
        gradient_suite(opts.seed),
        metric_suite(opts.seed),
    ];
    SelftestReport { suites }
}

const MEMBERSHIP_TOL: f64 = 1e-9;

/// `|<x,x>_L + 1|`, or infinity when the point is not on the upper sheet.
fn membership_error(x: &[f64]) -> f64 {
    if !(x[0] > 0.0) {
        return f64::INFINITY;
    }
    (minkowski(x, x) + 1.0).abs()
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-r..r)).collect()
}

/// A point lifted from a Euclidean vector of norm at most `radius`.
fn random_point(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> LorentzPoint {
    let e = uniform_vec(rng, n, 1.0);
    let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let r = rng.gen_range(0.0..radius);
    lift_from_euclidean(&e.iter().map(|v| v * r / norm).collect::<Vec<_>>())
}

/// A tangent vector at `x` with Lorentz norm drawn uniformly in `[0, max_norm)`.
fn random_tangent(rng: &mut ChaCha8Rng, x: &LorentzPoint, max_norm: f64) -> Vec<f64> {
    let u = uniform_vec(rng, x.coords().len(), 1.0);
    let t = project_to_tangent(x, &u).expect("matching lengths");
    let norm = t.lorentz_norm();
    let target = rng.gen_range(0.0..max_norm);
    if norm == 0.0 {
        return vec![0.0; u.len()];
    }
    t.coords().iter().map(|c| c * target / norm).collect()
}

/// `exp_map` with the optional injected defect.
fn exp_map_under_test(x: &LorentzPoint, v: &[f64], fault: Option<Fault>) -> crate::Result<Vec<f64>> {
    let mut y = exp_map(x, v)?.into_coords();
    if fault == Some(Fault::PerturbExpMap) {
        y[0] += 1e-6;
    }
    Ok(y)
}

pub fn membership_suite(opts: &SelftestOptions) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4D45_4D42);
    let draws = opts.membership_draws;
    let n = 8;

    let mut lift = CheckResult::new("lift_from_euclidean", MEMBERSHIP_TOL);
    for _ in 0..draws {
        let e = uniform_vec(&mut rng, n, 2.0);
        lift.record(membership_error(lift_from_euclidean(&e).coords()));
    }

    let mut exp = CheckResult::new("exp_map", MEMBERSHIP_TOL);
    for _ in 0..draws {
        let x = random_point(&mut rng, n, 2.0);
        let v = random_tangent(&mut rng, &x, 5.0);
        match exp_map_under_test(&x, &v, opts.fault) {
            Ok(y) => {
                let err = membership_error(&y);
                if !(err <= MEMBERSHIP_TOL) {
                    exp.note(format!("|<y,y>+1| = {err:.3e} at |v|_L = {:.3}", minkowski(&v, &v).sqrt()));
                }
                exp.record(err);
            }
            Err(e) => exp.fail(format!("exp_map error: {e}")),
        }
    }

    let linear = |name: &str, mode: PhiMode, rng: &mut ChaCha8Rng| {
        let mut check = CheckResult::new(name, MEMBERSHIP_TOL);
        for i in 0..draws {
            let mut p = HyperLinearParams::init(n, 6, mode, rng);
            p.bias = uniform_vec(rng, 6, 0.5);
            p.dropout = 0.3;
            let x = random_point(rng, n, 3.0);
            match hyper_linear(&x, &p, i % 2 == 0, rng) {
                Ok(y) => check.record(membership_error(y.coords())),
                Err(e) => check.fail(format!("hyper_linear error: {e}")),
            }
        }
        check
    };
    let lin_dropout = linear("hyper_linear/dropout", PhiMode::Dropout, &mut rng);
    let lin_norm = linear("hyper_linear/activation_norm", PhiMode::ActivationNorm, &mut rng);

    let mut agg = CheckResult::new("hyperbolic_aggregate", MEMBERSHIP_TOL);
    let t = 8;
    while agg.count < draws {
        let points: Vec<LorentzPoint> = (0..t).map(|_| random_point(&mut rng, n, 2.0)).collect();
        let theta = rng.gen_range(0.0..2.0) / t as f64;
        let outcome = semantic_adjacency(&points).and_then(|g| {
            let g = with_isolated_self_loops(&apply_lshad_rule(&g, theta));
            hyperbolic_aggregate(&g, &points)
        });
        match outcome {
            Ok(out) => out.iter().for_each(|y| agg.record(membership_error(y.coords()))),
            Err(e) => agg.fail(format!("aggregation error: {e}")),
        }
    }

    SuiteReport::timed("membership", start, vec![lift, exp, lin_dropout, lin_norm, agg])
}

pub fn roundtrip_suite(opts: &SelftestOptions) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x524F_554E);
    let mut check = CheckResult::new("log(x, exp(x, v)) - v", 1e-8);
    for _ in 0..opts.roundtrip_draws {
        let x = random_point(&mut rng, 6, 2.0);
        let v = random_tangent(&mut rng, &x, 5.0);
        let back = exp_map(&x, &v).and_then(|y| log_map(&x, &y));
        match back {
            Ok(b) => check.record(
                b.coords()
                    .iter()
                    .zip(&v)
                    .map(|(a, c)| (a - c).abs())
                    .fold(0.0, f64::max),
            ),
            Err(e) => check.fail(format!("roundtrip error: {e}")),
        }
    }
    SuiteReport::timed("roundtrip", start, vec![check])
}

pub fn matrix_adaptation_suite(opts: &SelftestOptions) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5448_4D31);
    let mut check = CheckResult::new("f_x(M) x on the sheet", MEMBERSHIP_TOL);
    let mut dims = CheckResult::new("f_x(M) x dimension", 0.0);
    for i in 0..opts.membership_draws {
        let n = 1 + i % 8;
        let m = 1 + (i / 8) % 8;
        let matrix = Tensor::from_fn(m + 1, n + 1, |_, _| rng.gen_range(-1.0..1.0));
        let x = random_point(&mut rng, n, 3.0);
        match f_x_m(&matrix, &x) {
            Ok(y) => {
                check.record(membership_error(y.coords()));
                dims.record(if y.dim() == m { 0.0 } else { 1.0 });
            }
            // v^T x = 0 has probability zero under continuous sampling.
            Err(e) => check.fail(format!("n={n} m={m}: {e}")),
        }
    }
    SuiteReport::timed("matrix_adaptation", start, vec![check, dims])
}

/// `sigma(0.6)` and `sigma(-0.4)` to 40 significant digits.
pub const SIGMOID_0_6: f64 = 0.645_656_306_225_795_452_909_110_636_411_882_964_076_9;
pub const SIGMOID_NEG_0_4: f64 = 0.401_312_339_887_547_999_630_921_340_594_492_165_805_4;

/// `1 - lshad(E, k)`, evaluated without cancellation.
fn lshad_tail(energy: f64, layer: usize, p: &LshadParams) -> f64 {
    crate::sigmoid(-(p.beta * layer as f64 - p.gamma + 1.0 / (energy + 1.0)))
}

pub fn lshad_suite() -> SuiteReport {
    let start = Instant::now();
    let p = LshadParams::default();
    let mut exact = CheckResult::new("values at E=0 and E->inf", 1e-12);
    exact.record((lshad(0.0, 1, &p) - SIGMOID_0_6).abs());
    exact.record((lshad(1e300, 1, &p) - SIGMOID_NEG_0_4).abs());
    exact.record((lshad(f64::INFINITY, 1, &p) - SIGMOID_NEG_0_4).abs());

    // lshad itself rounds to 1 once beta k exceeds about 37, so strictness
    // is checked on the exact complement, which stays representable.
    let energies: Vec<f64> = (0..100).map(|i| if i == 0 { 0.0 } else { 10f64.powf(i as f64 / 99.0 * 4.0 - 1.0) }).collect();
    let mut in_k = CheckResult::new("strictly increasing in k", 0.0);
    let mut in_e = CheckResult::new("strictly decreasing in E", 0.0);
    let mut weak = CheckResult::new("lshad monotone on grid", 0.0);
    for k in 1..=100 {
        for (j, &e) in energies.iter().enumerate() {
            if k < 100 {
                in_k.record(if lshad_tail(e, k + 1, &p) < lshad_tail(e, k, &p) { 0.0 } else { 1.0 });
                weak.record(if lshad(e, k + 1, &p) >= lshad(e, k, &p) { 0.0 } else { 1.0 });
            }
            if let Some(&e2) = energies.get(j + 1) {
                in_e.record(if lshad_tail(e2, k, &p) > lshad_tail(e, k, &p) { 0.0 } else { 1.0 });
                weak.record(if lshad(e2, k, &p) <= lshad(e, k, &p) { 0.0 } else { 1.0 });
            }
        }
    }
    SuiteReport::timed("lshad", start, vec![exact, in_k, in_e, weak])
}

/// Post- and pre-aggregation energies of one clustered point set.
pub fn energy_pair(rng: &mut ChaCha8Rng, t: usize, n: usize) -> crate::Result<(f64, f64)> {
    let clusters = rng.gen_range(2..=4);
    let centers: Vec<Vec<f64>> = (0..clusters).map(|_| uniform_vec(rng, n, 1.5)).collect();
    let spread = rng.gen_range(0.05..0.5);
    let points: Vec<LorentzPoint> = (0..t)
        .map(|i| {
            let c = &centers[i % clusters];
            lift_from_euclidean(&c.iter().map(|v| v + rng.gen_range(-spread..spread)).collect::<Vec<_>>())
        })
        .collect();
    let before = hyperbolic_dirichlet_energy(&points)?;
    let graph = semantic_adjacency(&points)?;
    let after = hyperbolic_dirichlet_energy(&hyperbolic_aggregate(&graph, &points)?)?;
    Ok((after, before))
}

pub fn energy_suite(opts: &SelftestOptions) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x454E_4552);
    let mut per_set = CheckResult::new("HDE after <= before + 1e-9", 1e-9);
    for s in 0..opts.energy_sets {
        match energy_pair(&mut rng, 32, 8) {
            Ok((after, before)) => {
                let excess = (after - before).max(0.0);
                if excess > 1e-9 {
                    per_set.note(format!("set {s}: before {before:.6e}, after {after:.6e}"));
                }
                per_set.record(excess);
            }
            Err(e) => per_set.fail(format!("set {s}: {e}")),
        }
    }
    // The inequality is monitored, not proven: the suite requires it in 95%
    // of sets and lists each violation.
    let share = per_set.failures as f64 / per_set.count.max(1) as f64;
    let mut rate = CheckResult::new("violation share", 0.05);
    rate.record(share);
    per_set.passed = true;
    SuiteReport::timed("energy", start, vec![per_set, rate])
}

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> Tensor {
    Tensor::from_fn(r, c, |_, _| rng.gen_range(-s..s))
}

/// Grad check of a closure over `params` (bound through a [`Bound`]) and
/// `extra` tape inputs.
fn layer_check<F>(name: &str, limit: f64, params: Vec<Tensor>, extra: Vec<Tensor>, h: f64, f: F) -> CheckResult
where
    F: Fn(&mut Tape, &Bound, &[Var]) -> crate::Result<Var>,
{
    let np = params.len();
    let mut inputs = params;
    inputs.extend(extra);
    let mut check = CheckResult::new(name, limit);
    let report = grad_check(
        |tape, vars| -> crate::Result<Var> {
            let bound = Bound::from_vars(vars[..np].to_vec());
            f(tape, &bound, &vars[np..])
        },
        &inputs,
        h,
    );
    match report {
        Ok(r) => {
            check.count = r.coordinates;
            check.worst = r.max_rel_error;
            check.passed = r.max_rel_error <= limit;
            check.failures = usize::from(!check.passed);
            if !check.passed {
                check.note(format!(
                    "input {} index {}: absolute error {:.3e}",
                    r.worst.0, r.worst.1, r.max_abs_error
                ));
            }
        }
        Err(e) => check.fail(format!("{e}")),
    }
    check
}

/// `sum_ij v_ij r_ij` for a fixed pseudo-random `r`, so no output
/// coordinate is invisible to the check.
fn probe(tape: &mut Tape, v: Var) -> crate::Result<Var> {
    let [rows, cols] = tape.value(v).shape();
    let mut rng = ChaCha8Rng::seed_from_u64((rows * 131 + cols) as u64);
    let r = tape.constant(rand_matrix(&mut rng, rows, cols, 1.0));
    let weighted = tape.mul(v, r)?;
    Ok(tape.sum(weighted))
}

/// Parameters of `store` redrawn at unit scale, so checks do not sit at
/// initialisation special cases.
fn generic(store: &ParamStore, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    store
        .tensors()
        .iter()
        .map(|t| rand_matrix(rng, t.rows(), t.cols(), 0.5))
        .collect()
}

pub fn gradient_suite(seed: u64) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4752_4144);
    let (t, d) = (4, 3);
    let euclid = rand_matrix(&mut rng, t, d, 0.8);
    let mut checks = Vec::new();

    checks.push(layer_check("expmap0/logmap0", 1e-4, vec![], vec![euclid.clone()], 1e-6, |tape, _, x| {
        let p = tape.expmap0_rows(x[0]);
        let back = tape.logmap0_rows(p)?;
        let s = probe(tape, p)?;
        let b = probe(tape, back)?;
        Ok(tape.add(s, b)?)
    }));

    for (name, mode) in [
        ("hyper_linear/dropout", PhiMode::Dropout),
        ("hyper_linear/activation_norm", PhiMode::ActivationNorm),
    ] {
        let mut store = ParamStore::new();
        let layer = HyperLinear::new(&mut store, "l", d, d, mode, 0.0, &mut rng);
        let params = generic(&store, &mut rng);
        checks.push(layer_check(name, 1e-4, params, vec![euclid.clone()], 1e-6, |tape, b, x| {
            let p = tape.expmap0_rows(x[0]);
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let y = layer.forward(tape, b, p, false, &mut r)?;
            probe(tape, y)
        }));
    }

    {
        let mut store = ParamStore::new();
        let layers = (0..2)
            .map(|i| HyperLinear::new(&mut store, &format!("he{i}"), d, d, PhiMode::ActivationNorm, 0.0, &mut rng))
            .collect();
        let he = HeGcn {
            layers,
            rule: ThresholdRule::Lshad(LshadParams::default()),
        };
        let params = generic(&store, &mut rng);
        checks.push(layer_check("he_gcn", 1e-4, params, vec![euclid.clone()], 1e-6, |tape, b, x| {
            let p = tape.expmap0_rows(x[0]);
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let y = he.forward(tape, b, p, false, &mut r, &mut Vec::new())?;
            let y = tape.logmap0_rows(y)?;
            probe(tape, y)
        }));
    }

    {
        let mut store = ParamStore::new();
        let layers = vec![HyperLinear::new(&mut store, "ht", d, d, PhiMode::ActivationNorm, 0.0, &mut rng)];
        let hg = FixedGraphHgcn { layers };
        let params = generic(&store, &mut rng);
        let adj = crate::graphs::row_softmax(&temporal_adjacency(t, &TemporalParams::default()).adjacency);
        checks.push(layer_check("temporal_hgcn", 1e-4, params, vec![euclid.clone()], 1e-6, |tape, b, x| {
            let p = tape.expmap0_rows(x[0]);
            let a = tape.constant(adj.clone());
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let y = hg.forward(tape, b, a, p, false, &mut r)?;
            let y = tape.logmap0_rows(y)?;
            probe(tape, y)
        }));
    }

    {
        let mut store = ParamStore::new();
        let gcn = Gcn::new(&mut store, "g", &[d, 4, 2], &mut rng);
        let params = generic(&store, &mut rng);
        checks.push(layer_check("cosine_gcn", 1e-4, params, vec![euclid.clone()], 1e-6, |tape, b, x| {
            let adj = crate::graphs::cosine_adjacency_var(tape, x[0])?;
            let y = gcn.forward(tape, b, adj, x[0])?;
            probe(tape, y)
        }));
    }

    {
        let mut store = ParamStore::new();
        let dsi = Dsi::new(&mut store, "dsi", d, DsiConfig { lambda: 0.5, ..DsiConfig::default() }, &mut rng);
        let params = generic(&store, &mut rng);
        let other = rand_matrix(&mut rng, t, d, 0.5);
        checks.push(layer_check("dsi", 1e-4, params, vec![euclid.clone(), other], 1e-6, |tape, b, x| {
            let out = dsi.forward(tape, b, x[0], x[1])?;
            probe(tape, out.v_f)
        }));
    }

    {
        let mut store = ParamStore::new();
        let cls = HyperClassifier::new(&mut store, "c", d, 1.0, &mut rng);
        let params = generic(&store, &mut rng);
        checks.push(layer_check("hyper_classifier", 1e-4, params, vec![euclid.clone()], 1e-6, |tape, b, x| {
            let p = tape.expmap0_rows(x[0]);
            let s = cls.forward(tape, b, p)?;
            Ok(tape.sum(s))
        }));
    }

    let video = synth_generate(&SynthSpec {
        num_videos: 1,
        t_min: 3,
        t_max: 3,
        visual_dim: 5,
        audio_dim: 3,
        seed,
        ..SynthSpec::default()
    })
    .map(|mut v| v.remove(0));
    match video.and_then(|f| {
        let (model, store) = Model::new(ModelConfig { dim: 8, seed, ..ModelConfig::default() }, 5, 3)?;
        Ok((model, store, f))
    }) {
        Ok((model, store, f)) => {
            let params = store.tensors().to_vec();
            checks.push(layer_check(
                "preprocess",
                1e-4,
                params.clone(),
                vec![f.visual.clone(), f.audio.clone().expect("audio requested")],
                1e-6,
                |tape, b, x| {
                    let y = model.preprocess_var(tape, b, x[0], Some(x[1]))?;
                    probe(tape, y)
                },
            ));
            checks.push(layer_check(
                "end_to_end T=3 d=8",
                1e-3,
                params,
                vec![f.visual.clone(), f.audio.clone().expect("audio requested")],
                1e-5,
                |tape, b, x| {
                    let mut r = ChaCha8Rng::seed_from_u64(0);
                    let out = model.forward_var(tape, b, x[0], Some(x[1]), false, &mut r)?;
                    Ok(bce_loss_var(tape, out.video_score, 1))
                },
            ));
        }
        Err(e) => {
            let mut c = CheckResult::new("end_to_end T=3 d=8", 1e-3);
            c.fail(format!("{e}"));
            checks.push(c);
        }
    }
    SuiteReport::timed("gradients", start, checks)
}

/// AP by thresholding at every distinct score and counting directly, summed
/// as an exact fraction and divided once.
pub fn ap_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let pos = labels.iter().filter(|&&l| l == 1).count() as i128;
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut num, mut den, mut prev_tp) = (0i128, 1i128, 0i128);
    for th in thresholds {
        let sel: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= th).collect();
        let tp = sel.iter().filter(|&&i| labels[i] == 1).count() as i128;
        let (n, d) = ((tp - prev_tp) * tp, pos * sel.len() as i128);
        num = num * d + n * den;
        den *= d;
        prev_tp = tp;
    }
    num as f64 / den as f64
}

/// Fraction of (positive, negative) pairs ordered correctly, ties one half.
pub fn auc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / pairs
}

pub fn metric_suite(seed: u64) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4D45_5452);
    let mut ap = CheckResult::new("AP vs enumeration, n=8", 0.0);
    let mut auc = CheckResult::new("AUC vs pair counting, n=8", 0.0);
    for pattern in 0u32..256 {
        let labels: Vec<u8> = (0..8).map(|b| ((pattern >> b) & 1) as u8).collect();
        let scores: Vec<f64> = (0..8).map(|_| f64::from(rng.gen_range(0..5u8)) / 4.0).collect();
        if pattern != 0 {
            match average_precision(&scores, &labels) {
                Ok(v) => ap.record((v - ap_oracle(&scores, &labels)).abs()),
                Err(e) => ap.fail(format!("pattern {pattern:08b}: {e}")),
            }
        }
        if pattern != 0 && pattern != 255 {
            match roc_auc(&scores, &labels) {
                Ok(v) => auc.record((v - auc_oracle(&scores, &labels)).abs()),
                Err(e) => auc.fail(format!("pattern {pattern:08b}: {e}")),
            }
        }
    }
    let mut worked = CheckResult::new("worked examples", 0.0);
    let s = [0.9, 0.8, 0.7, 0.6];
    let l = [1, 0, 1, 0];
    match (average_precision(&s, &l), roc_auc(&s, &l)) {
        (Ok(a), Ok(u)) => {
            worked.record((a - 5.0 / 6.0).abs());
            worked.record((u - 0.75).abs());
        }
        (Err(e), _) | (_, Err(e)) => worked.fail(format!("{e}")),
    }
    SuiteReport::timed("metrics", start, vec![ap, auc, worked])
}
