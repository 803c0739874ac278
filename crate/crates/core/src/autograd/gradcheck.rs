//! Central finite-difference gradient checks.

use serde::Serialize;

use crate::autograd::tape::{Tape, Var};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Half-width of the central difference.
    pub step: f32,
    /// Largest accepted relative error.
    pub tol: f64,
    /// Lower bound on the relative-error denominator, so that entries whose
    /// true gradient is essentially zero are judged on absolute error.
    pub floor: f64,
    /// Check at most this many entries, spread evenly over the input.
    pub max_entries: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-3,
            tol: 1e-3,
            floor: 1e-3,
            max_entries: None,
        }
    }
}

impl GradCheckOptions {
    pub fn with_tol(tol: f64) -> Self {
        GradCheckOptions { tol, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index of the entry with the largest relative error.
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
    pub non_finite: bool,
    pub passed: bool,
}

fn sample_indices(len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < len && m > 0 => (0..m).map(|i| i * len / m).collect(),
        _ => (0..len).collect(),
    }
}

/// Compares `analytic` against central differences of `eval` around `input`.
///
/// Perturbations are applied in `f32`; the numeric slope divides by the step
/// that was actually representable, not the nominal one.
pub fn compare_gradients(
    analytic: &Tensor,
    input: &Tensor,
    mut eval: impl FnMut(&Tensor) -> Result<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    analytic.expect_same_shape(input)?;
    if !input.all_finite() {
        return invalid("gradient check input contains non-finite values");
    }
    if !(opts.step > 0.0) {
        return invalid("gradient check step must be positive");
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
        non_finite: !analytic.all_finite(),
        passed: false,
    };
    let mut probe = input.clone();
    for i in sample_indices(input.len(), opts.max_entries) {
        let x = input.data()[i];
        let (xp, xm) = (x + opts.step, x - opts.step);
        probe.data_mut()[i] = xp;
        let fp = eval(&probe)?;
        probe.data_mut()[i] = xm;
        let fm = eval(&probe)?;
        probe.data_mut()[i] = x;
        let numeric = (fp - fm) / (xp as f64 - xm as f64);
        let a = analytic.data()[i] as f64;
        if !numeric.is_finite() || !a.is_finite() {
            report.non_finite = true;
            continue;
        }
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
        report.checked += 1;
    }
    report.passed = !report.non_finite && report.max_rel_error <= opts.tol;
    Ok(report)
}

/// Checks the tape gradient of a scalar function of one tensor.
///
/// `f` receives a fresh tape and the input variable and must return a
/// single-element variable.
pub fn grad_check(
    f: impl Fn(&mut Tape, Var) -> Result<Var>,
    input: &Tensor,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    let y = f(&mut tape, x)?;
    let analytic = match tape.backward(y)?.wrt(x) {
        Some(g) => g.clone(),
        None => Tensor::zeros(input.shape()),
    };
    compare_gradients(
        &analytic,
        input,
        |probe| {
            let mut t = Tape::new();
            let x = t.leaf(probe.clone());
            let y = f(&mut t, x)?;
            t.scalar(y)
        },
        opts,
    )
}
