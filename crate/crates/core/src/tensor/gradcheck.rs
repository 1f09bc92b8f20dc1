use super::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences with step `h`, coordinate by coordinate.
///
/// `f` is re-run on a fresh tape for every perturbation, so it must be a pure
/// function of its inputs (fixed dropout seeds and the like). Errors from
/// `f` pass through unchanged.
pub fn grad_check<F, E>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.param(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, inputs[which].shape());
        for k in 0..inputs[which].len() {
            let orig = inputs[which].data()[k];
            work[which].data_mut()[k] = orig + h;
            let plus = eval(&work)?;
            work[which].data_mut()[k] = orig - h;
            let minus = eval(&work)?;
            work[which].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[k];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-8);
            report.coordinates += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (which, k);
            }
        }
    }
    Ok(report)
}
