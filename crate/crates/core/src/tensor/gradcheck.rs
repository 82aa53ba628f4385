use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |analytic|)` over all entries.
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    /// First `(input, flat index)` where either side was NaN or infinite.
    pub non_finite: Option<(usize, usize)>,
    pub entries: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.non_finite.is_none() && self.max_rel_error < tolerance
    }
}

/// Checks the reverse-mode gradient of the scalar function `f` at `inputs`
/// against central finite differences with step `step`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], step: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::contract("grad_check step must be positive"));
    }
    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter().map(|v| grads.get_or_zeros(*v)).collect()
    };

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        f(&tape, &vars)?.value().item()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        non_finite: None,
        entries: 0,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let original = input.data()[j];
            probe[i].data_mut()[j] = original + step;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = original - step;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let exact = analytic[i].data()[j];
            report.entries += 1;
            if !numeric.is_finite() || !exact.is_finite() {
                report.non_finite.get_or_insert((i, j));
                continue;
            }
            let err = (exact - numeric).abs() / exact.abs().max(1.0);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}
