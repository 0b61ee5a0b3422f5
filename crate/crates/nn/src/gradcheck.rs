//! Central-difference gradients, used to verify every analytic backward pass.

use crate::error::{NnError, Result};
use crate::module::Module;

/// Numeric gradient of `loss` with respect to every coordinate of parameter
/// `param`: `(L(p + step) − L(p − step)) / (2·step)`.
pub fn finite_diff_grad<M: Module>(model: &mut M, mut loss: impl FnMut(&M) -> f64, param: &str, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(NnError::InvalidStep(step));
    }
    let len = model.param_mut(param)?.value.len();
    let mut grad = Vec::with_capacity(len);
    for i in 0..len {
        let original = model.param_mut(param)?.value.data()[i];
        model.param_mut(param)?.value.data_mut()[i] = original + step;
        let plus = loss(model);
        model.param_mut(param)?.value.data_mut()[i] = original - step;
        let minus = loss(model);
        model.param_mut(param)?.value.data_mut()[i] = original;
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

/// Largest `|a − n| / max(|a|, |n|, floor)` over paired entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
