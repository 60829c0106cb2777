use super::param::ParamSet;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// Magnitude below which gradients are compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst element.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences for every element of every parameter.
///
/// `f` must be a pure function of the parameters: anything stochastic
/// (dropout masks) has to be re-seeded identically on each call.
pub fn grad_check<F>(params: &ParamSet, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamSet) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    let grads = tape.backward(loss)?;
    let mut analytic = params.clone();
    analytic.zero_grads();
    tape.accumulate_param_grads(&grads, &mut analytic);
    drop(tape);

    let mut eval = |ps: &ParamSet| -> Result<f64> {
        let mut t = Tape::new();
        let v = f(&mut t, ps)?;
        let out = t.value(v).data()[0];
        if out.is_finite() {
            Ok(out)
        } else {
            Err(Error::NonFinite("grad_check objective".into()))
        }
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (pi, param) in analytic.iter().enumerate() {
        let id = super::param::ParamId(pi);
        for i in 0..param.value().len() {
            let orig = probe.get(id).value()[i];
            probe.get_mut(id).value_mut()[i] = orig + GRAD_CHECK_STEP;
            let up = eval(&probe)?;
            probe.get_mut(id).value_mut()[i] = orig - GRAD_CHECK_STEP;
            let down = eval(&probe)?;
            probe.get_mut(id).value_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
            let err = relative_error(param.grad()[i], numeric);
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                if err >= report.max_relative_error {
                    report.worst = Some((param.name().to_string(), i));
                }
            }
        }
    }
    Ok(report)
}
