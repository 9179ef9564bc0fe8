//! Central finite-difference checks for analytic gradients.
//!
//! The numeric side only ever evaluates the forward function, so it stays
//! independent of the backward rules it is checking.

use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::Result;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so that gradients that are
/// numerically zero compare on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Worst entry found by a check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compares `analytic` against central differences of `f` for every entry of
/// every named input.
pub fn check_gradients<F>(
    inputs: &BTreeMap<String, Tensor>,
    analytic: &BTreeMap<String, Tensor>,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&BTreeMap<String, Tensor>) -> Result<f64>,
{
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = inputs.clone();
    for (name, value) in inputs {
        let grad = analytic.get(name);
        for idx in 0..value.len() {
            let base = value.data()[idx];
            probe.get_mut(name).expect("present").data_mut()[idx] = base + FD_STEP;
            let up = f(&probe)?;
            probe.get_mut(name).expect("present").data_mut()[idx] = base - FD_STEP;
            let down = f(&probe)?;
            probe.get_mut(name).expect("present").data_mut()[idx] = base;

            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = grad.map_or(0.0, |g| g.data()[idx]);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err.max(report.max_rel_error);
                report.worst_param = name.clone();
                report.worst_index = idx;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
