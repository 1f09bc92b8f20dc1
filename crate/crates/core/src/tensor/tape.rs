use rand::Rng;

use super::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Concat { a: usize, b: usize, axis: usize },
    SoftmaxRows(usize),
    Sigmoid(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Arccosh(usize),
    Cosh(usize),
    Sinh(usize),
    Abs(usize),
    Clamp { a: usize, lo: f64, hi: f64 },
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    SumCols(usize),
    NormRows(usize),
    MaxPoolCols { a: usize, argmax: Vec<usize> },
    Dropout { a: usize, mask: Vec<f64> },
    Transpose(usize),
    SelectRows { a: usize, idx: Vec<usize> },
    SelectCols { a: usize, idx: Vec<usize> },
    ShiftRows { a: usize, offset: isize },
    ExpMap0Rows(usize),
    LogMap0Rows(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Arguments at or below this are treated as `1 + ARCOSH_GUARD` when
/// differentiating `arccosh`.
const ARCOSH_GUARD: f64 = 1e-12;
/// Forward `arccosh` arguments in `[1 - tol, 1)` clamp silently to 1.
const ARCOSH_DOMAIN_TOL: f64 = 1e-9;

/// A single-threaded recording of forward operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every recorded value that needs one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, shape: [usize; 2]) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape[0], shape[1]))
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn broadcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<[usize; 2]> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a.rows(), b.rows()), dim(a.cols(), b.cols())) {
        (Some(r), Some(c)) => Ok([r, c]),
        _ => Err(shape_err(op, a, b)),
    }
}

#[inline]
fn bidx(t: &Tensor, i: usize, j: usize) -> usize {
    let r = if t.rows() == 1 { 0 } else { i };
    let c = if t.cols() == 1 { 0 } else { j };
    r * t.cols() + c
}

fn zip_broadcast(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let [r, c] = broadcast_shape(op, a, b)?;
    Ok(Tensor::from_fn(r, c, |i, j| {
        f(a.data()[bidx(a, i, j)], b.data()[bidx(b, i, j)])
    }))
}

/// Sums `g` down to `shape` over broadcast dimensions.
fn reduce_to(g: &Tensor, shape: [usize; 2]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape[0], shape[1]);
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let k = bidx(&out, i, j);
            out.data_mut()[k] += g.get(i, j);
        }
    }
    out
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// `sinh(r)/r`, and `(r cosh r - sinh r)/r^3` which is `s'(r)/r`.
fn sinhc(r: f64) -> (f64, f64) {
    if r < 1e-4 {
        let r2 = r * r;
        (1.0 + r2 / 6.0, 1.0 / 3.0 + r2 / 30.0)
    } else {
        let (s, c) = (r.sinh(), r.cosh());
        (s / r, (r * c - s) / (r * r * r))
    }
}

/// `asinh(r)/r`, and `(r/sqrt(1+r^2) - asinh r)/r^3` which is `q'(r)/r`.
fn asinhc(r: f64) -> (f64, f64) {
    if r < 1e-4 {
        let r2 = r * r;
        (1.0 - r2 / 6.0, -1.0 / 3.0 + 0.3 * r2)
    } else {
        let a = r.asinh();
        (a / r, (r / (1.0 + r * r).sqrt() - a) / (r * r * r))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    fn push_raw(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.push_raw(value, op, needs_grad)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        self.push(value, op, &[a.0])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = zip_broadcast("add", self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = zip_broadcast("sub", self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a.0, b.0), &[a.0, b.0]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = zip_broadcast("mul", self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = zip_broadcast("div", self.value(a), self.value(b), |x, y| x / y)?;
        Ok(self.push(value, Op::Div(a.0, b.0), &[a.0, b.0]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a.0, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Adds a constant to every entry.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::Offset(a.0))
    }

    /// Concatenates along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let value = match axis {
            0 => {
                if ta.cols() != tb.cols() {
                    return Err(shape_err("concat", ta, tb));
                }
                let mut data = ta.data().to_vec();
                data.extend_from_slice(tb.data());
                Tensor::new(ta.rows() + tb.rows(), ta.cols(), data)?
            }
            1 => {
                if ta.rows() != tb.rows() {
                    return Err(shape_err("concat", ta, tb));
                }
                let (ca, cb) = (ta.cols(), tb.cols());
                Tensor::from_fn(ta.rows(), ca + cb, |i, j| {
                    if j < ca {
                        ta.get(i, j)
                    } else {
                        tb.get(i, j - ca)
                    }
                })
            }
            _ => return Err(TensorError::Invalid(format!("concat axis {axis}"))),
        };
        Ok(self.push(value, Op::Concat { a: a.0, b: b.0, axis }, &[a.0, b.0]))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = Tensor::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            softmax_row(x.row(r), value.row_mut(r));
        }
        self.push(value, Op::SoftmaxRows(a.0), &[a.0])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, crate::sigmoid, Op::Sigmoid(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a.0))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a.0))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a.0))
    }

    pub fn cosh(&mut self, a: Var) -> Var {
        self.unary(a, f64::cosh, Op::Cosh(a.0))
    }

    pub fn sinh(&mut self, a: Var) -> Var {
        self.unary(a, f64::sinh, Op::Sinh(a.0))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a.0))
    }

    /// Clamps entries to `[lo, hi]`; the gradient is zero where clamped.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp { a: a.0, lo, hi })
    }

    /// Fails on arguments below `1 - 1e-9`; `[1 - 1e-9, 1)` clamps to 0.
    pub fn arccosh(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self
            .value(a)
            .data()
            .iter()
            .find(|&&x| !(x >= 1.0 - ARCOSH_DOMAIN_TOL))
        {
            return Err(TensorError::Domain {
                op: "arccosh",
                value: bad,
            });
        }
        Ok(self.unary(a, |x| x.max(1.0).acosh(), Op::Arccosh(a.0)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a.0), &[a.0])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(value, Op::Mean(a.0), &[a.0])
    }

    /// Sums each row, giving an `r x 1` column.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::column_vector((0..t.rows()).map(|r| t.row(r).iter().sum()).collect());
        self.push(value, Op::SumRows(a.0), &[a.0])
    }

    /// Sums each column, giving a `1 x c` row.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = vec![0.0; t.cols()];
        for r in 0..t.rows() {
            for (o, v) in out.iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        self.push(Tensor::row_vector(out), Op::SumCols(a.0), &[a.0])
    }

    /// Euclidean norm of each row, giving an `r x 1` column.
    pub fn norm_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::column_vector(
            (0..t.rows())
                .map(|r| t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect(),
        );
        self.push(value, Op::NormRows(a.0), &[a.0])
    }

    /// 1-D max pooling along the column axis.
    pub fn max_pool_cols(&mut self, a: Var, window: usize, stride: usize) -> Result<Var> {
        let t = self.value(a);
        if window == 0 || stride == 0 || t.cols() < window {
            return Err(TensorError::Invalid(format!(
                "max pool window {window} stride {stride} over {} columns",
                t.cols()
            )));
        }
        let out_cols = (t.cols() - window) / stride + 1;
        let mut argmax = Vec::with_capacity(t.rows() * out_cols);
        let mut data = Vec::with_capacity(t.rows() * out_cols);
        for r in 0..t.rows() {
            let row = t.row(r);
            for o in 0..out_cols {
                let start = o * stride;
                let mut best = start;
                for j in start + 1..start + window {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                argmax.push(r * t.cols() + best);
                data.push(row[best]);
            }
        }
        let value = Tensor::new(t.rows(), out_cols, data)?;
        Ok(self.push(value, Op::MaxPoolCols { a: a.0, argmax }, &[a.0]))
    }

    /// Inverted dropout: kept entries are scaled by `1/(1-rate)`.
    /// A zero rate returns `a` unchanged.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Invalid(format!("dropout rate {rate}")));
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let t = self.value(a);
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(t.rows(), t.cols(), data)?;
        Ok(self.push(value, Op::Dropout { a: a.0, mask }, &[a.0]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a.0), &[a.0])
    }

    /// Gathers rows by index (repeats allowed).
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * t.cols());
        for &i in idx {
            if i >= t.rows() {
                return Err(TensorError::Index {
                    index: i,
                    extent: t.rows(),
                });
            }
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::new(idx.len(), t.cols(), data)?;
        Ok(self.push(value, Op::SelectRows { a: a.0, idx: idx.to_vec() }, &[a.0]))
    }

    /// Gathers columns by index (repeats allowed).
    pub fn select_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&j| j >= t.cols()) {
            return Err(TensorError::Index {
                index: bad,
                extent: t.cols(),
            });
        }
        let value = Tensor::from_fn(t.rows(), idx.len(), |i, j| t.get(i, idx[j]));
        Ok(self.push(value, Op::SelectCols { a: a.0, idx: idx.to_vec() }, &[a.0]))
    }

    /// `out[i] = a[i + offset]`, zero outside the valid range.
    pub fn shift_rows(&mut self, a: Var, offset: isize) -> Var {
        let t = self.value(a);
        let n = t.rows() as isize;
        let value = Tensor::from_fn(t.rows(), t.cols(), |i, j| {
            let src = i as isize + offset;
            if (0..n).contains(&src) {
                t.get(src as usize, j)
            } else {
                0.0
            }
        });
        self.push(value, Op::ShiftRows { a: a.0, offset }, &[a.0])
    }

    /// Row-wise exponential map at the origin of the `K = -1` hyperboloid:
    /// each row `e` becomes `[cosh|e|, sinh|e| e/|e|]`.
    pub fn expmap0_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.cols();
        let mut value = Tensor::zeros(t.rows(), n + 1);
        for r in 0..t.rows() {
            let row = t.row(r);
            let rad = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let (s, _) = sinhc(rad);
            let out = value.row_mut(r);
            let mut sq = 0.0;
            for (o, v) in out[1..].iter_mut().zip(row) {
                *o = s * v;
                sq += *o * *o;
            }
            out[0] = (1.0 + sq).sqrt();
        }
        self.push(value, Op::ExpMap0Rows(a.0), &[a.0])
    }

    /// Row-wise logarithmic map at the origin of the `K = -1` hyperboloid,
    /// returning spatial tangent coordinates. Reads only the spatial part,
    /// which determines an on-manifold point.
    pub fn logmap0_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.cols() < 2 {
            return Err(TensorError::Invalid("logmap0 needs >= 2 columns".into()));
        }
        let n = t.cols() - 1;
        let mut value = Tensor::zeros(t.rows(), n);
        for r in 0..t.rows() {
            let sp = &t.row(r)[1..];
            let rad = sp.iter().map(|v| v * v).sum::<f64>().sqrt();
            let (q, _) = asinhc(rad);
            for (o, v) in value.row_mut(r).iter_mut().zip(sp) {
                *o = q * v;
            }
        }
        Ok(self.push(value, Op::LogMap0Rows(a.0), &[a.0]))
    }

    /// Reverse sweep from a `1x1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != [1, 1] {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], idx: usize, g: Tensor) {
        if !self.nodes[idx].needs_grad {
            return;
        }
        match &mut grads[idx] {
            Some(existing) => {
                for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += v;
                }
            }
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &self.nodes[idx].value;
        let val = |i: usize| &self.nodes[i].value;
        let elementwise = |i: usize, f: &dyn Fn(f64, f64, f64) -> f64| -> Tensor {
            let x = val(i);
            let data = x
                .data()
                .iter()
                .zip(y.data())
                .zip(g.data())
                .map(|((&xv, &yv), &gv)| f(xv, yv, gv))
                .collect();
            Tensor::new(x.rows(), x.cols(), data).expect("shape preserved")
        };
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[*a].needs_grad {
                    let ga = g.matmul(&val(*b).transpose()).expect("matmul vjp");
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[*b].needs_grad {
                    let gb = val(*a).transpose().matmul(g).expect("matmul vjp");
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, reduce_to(g, val(*a).shape()));
                self.accumulate(grads, *b, reduce_to(g, val(*b).shape()));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, reduce_to(g, val(*a).shape()));
                self.accumulate(grads, *b, reduce_to(&g.map(|v| -v), val(*b).shape()));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if self.nodes[*a].needs_grad {
                    let full = Tensor::from_fn(g.rows(), g.cols(), |i, j| {
                        g.get(i, j) * tb.data()[bidx(tb, i, j)]
                    });
                    self.accumulate(grads, *a, reduce_to(&full, ta.shape()));
                }
                if self.nodes[*b].needs_grad {
                    let full = Tensor::from_fn(g.rows(), g.cols(), |i, j| {
                        g.get(i, j) * ta.data()[bidx(ta, i, j)]
                    });
                    self.accumulate(grads, *b, reduce_to(&full, tb.shape()));
                }
            }
            Op::Div(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if self.nodes[*a].needs_grad {
                    let full = Tensor::from_fn(g.rows(), g.cols(), |i, j| {
                        g.get(i, j) / tb.data()[bidx(tb, i, j)]
                    });
                    self.accumulate(grads, *a, reduce_to(&full, ta.shape()));
                }
                if self.nodes[*b].needs_grad {
                    let full = Tensor::from_fn(g.rows(), g.cols(), |i, j| {
                        let bv = tb.data()[bidx(tb, i, j)];
                        -g.get(i, j) * ta.data()[bidx(ta, i, j)] / (bv * bv)
                    });
                    self.accumulate(grads, *b, reduce_to(&full, tb.shape()));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|v| v * c)),
            Op::Offset(a) => self.accumulate(grads, *a, g.clone()),
            Op::Concat { a, b, axis } => {
                let (ta, tb) = (val(*a), val(*b));
                if *axis == 0 {
                    let split = ta.len();
                    let ga = Tensor::new(ta.rows(), ta.cols(), g.data()[..split].to_vec());
                    let gb = Tensor::new(tb.rows(), tb.cols(), g.data()[split..].to_vec());
                    self.accumulate(grads, *a, ga.expect("concat vjp"));
                    self.accumulate(grads, *b, gb.expect("concat vjp"));
                } else {
                    let ca = ta.cols();
                    let ga = Tensor::from_fn(ta.rows(), ca, |i, j| g.get(i, j));
                    let gb = Tensor::from_fn(tb.rows(), tb.cols(), |i, j| g.get(i, j + ca));
                    self.accumulate(grads, *a, ga);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::SoftmaxRows(a) => {
                let mut out = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((o, p), q) in out.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = p * (q - dot);
                    }
                }
                self.accumulate(grads, *a, out);
            }
            Op::Sigmoid(a) => {
                let t = elementwise(*a, &|_, s, gv| gv * s * (1.0 - s));
                self.accumulate(grads, *a, t)
            }
            Op::Relu(a) => {
                let t = elementwise(*a, &|x, _, gv| if x > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *a, t)
            }
            Op::Exp(a) => {
                let t = elementwise(*a, &|_, e, gv| gv * e);
                self.accumulate(grads, *a, t)
            }
            Op::Log(a) => {
                let t = elementwise(*a, &|x, _, gv| gv / x);
                self.accumulate(grads, *a, t)
            }
            Op::Sqrt(a) => {
                let t = elementwise(*a, &|_, s, gv| if s > 0.0 { 0.5 * gv / s } else { 0.0 });
                self.accumulate(grads, *a, t)
            }
            Op::Arccosh(a) => {
                let t = elementwise(*a, &|x, _, gv| {
                    let xc = x.max(1.0 + ARCOSH_GUARD);
                    gv / (xc * xc - 1.0).sqrt()
                });
                self.accumulate(grads, *a, t)
            }
            Op::Cosh(a) => {
                let t = elementwise(*a, &|x, _, gv| gv * x.sinh());
                self.accumulate(grads, *a, t)
            }
            Op::Sinh(a) => {
                let t = elementwise(*a, &|x, _, gv| gv * x.cosh());
                self.accumulate(grads, *a, t)
            }
            Op::Abs(a) => {
                let t = elementwise(*a, &|x, _, gv| gv * x.signum() * (x != 0.0) as u8 as f64);
                self.accumulate(grads, *a, t)
            }
            Op::Clamp { a, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                let t = elementwise(*a, &|x, _, gv| if x > lo && x < hi { gv } else { 0.0 });
                self.accumulate(grads, *a, t)
            }
            Op::Sum(a) => {
                let t = val(*a);
                self.accumulate(grads, *a, Tensor::filled(t.rows(), t.cols(), g.data()[0]));
            }
            Op::Mean(a) => {
                let t = val(*a);
                let v = g.data()[0] / t.len() as f64;
                self.accumulate(grads, *a, Tensor::filled(t.rows(), t.cols(), v));
            }
            Op::SumRows(a) => {
                let t = val(*a);
                self.accumulate(grads, *a, Tensor::from_fn(t.rows(), t.cols(), |i, _| g.get(i, 0)));
            }
            Op::SumCols(a) => {
                let t = val(*a);
                self.accumulate(grads, *a, Tensor::from_fn(t.rows(), t.cols(), |_, j| g.get(0, j)));
            }
            Op::NormRows(a) => {
                let t = val(*a);
                let out = Tensor::from_fn(t.rows(), t.cols(), |i, j| {
                    let n = y.get(i, 0);
                    if n > 0.0 {
                        g.get(i, 0) * t.get(i, j) / n
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *a, out);
            }
            Op::MaxPoolCols { a, argmax } => {
                let t = val(*a);
                let mut out = Tensor::zeros(t.rows(), t.cols());
                for (k, &src) in argmax.iter().enumerate() {
                    out.data_mut()[src] += g.data()[k];
                }
                self.accumulate(grads, *a, out);
            }
            Op::Dropout { a, mask } => {
                let t = val(*a);
                let data = g.data().iter().zip(mask).map(|(gv, m)| gv * m).collect();
                let out = Tensor::new(t.rows(), t.cols(), data).expect("dropout vjp");
                self.accumulate(grads, *a, out);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::SelectRows { a, idx } => {
                let t = val(*a);
                let mut out = Tensor::zeros(t.rows(), t.cols());
                for (k, &src) in idx.iter().enumerate() {
                    for (o, v) in out.row_mut(src).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *a, out);
            }
            Op::SelectCols { a, idx } => {
                let t = val(*a);
                let mut out = Tensor::zeros(t.rows(), t.cols());
                for i in 0..t.rows() {
                    for (k, &src) in idx.iter().enumerate() {
                        let cur = out.get(i, src);
                        out.set(i, src, cur + g.get(i, k));
                    }
                }
                self.accumulate(grads, *a, out);
            }
            Op::ShiftRows { a, offset } => {
                let t = val(*a);
                let n = t.rows() as isize;
                let mut out = Tensor::zeros(t.rows(), t.cols());
                for i in 0..t.rows() {
                    let src = i as isize + offset;
                    if (0..n).contains(&src) {
                        for (o, v) in out.row_mut(src as usize).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                }
                self.accumulate(grads, *a, out);
            }
            Op::ExpMap0Rows(a) => {
                let t = val(*a);
                let mut out = Tensor::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    let x = t.row(r);
                    let gr = g.row(r);
                    let rad = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let (s, ds) = sinhc(rad);
                    let gs = &gr[1..];
                    let dot: f64 = gs.iter().zip(x).map(|(p, q)| p * q).sum();
                    // d(cosh r)/dx = s x
                    let coef = ds * dot + gr[0] * s;
                    for ((o, gv), xv) in out.row_mut(r).iter_mut().zip(gs).zip(x) {
                        *o = s * gv + coef * xv;
                    }
                }
                self.accumulate(grads, *a, out);
            }
            Op::LogMap0Rows(a) => {
                let t = val(*a);
                let mut out = Tensor::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    let sp = &t.row(r)[1..];
                    let gr = g.row(r);
                    let rad = sp.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let (q, dq) = asinhc(rad);
                    let dot: f64 = gr.iter().zip(sp).map(|(p, v)| p * v).sum();
                    let orow = out.row_mut(r);
                    for ((o, gv), v) in orow[1..].iter_mut().zip(gr).zip(sp) {
                        *o = q * gv + dq * dot * v;
                    }
                }
                self.accumulate(grads, *a, out);
            }
        }
    }
}
