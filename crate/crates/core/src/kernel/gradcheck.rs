//! Central finite-difference checks of analytic gradients.

use super::ParamStore;

pub const STEP: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely.
pub const DENOM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

/// Compares `analytic` with central differences of `loss` over every scalar
/// of `params` (or at most `max_per_tensor` evenly spaced entries of each).
pub fn check(
    params: &mut ParamStore<f64>,
    analytic: &ParamStore<f64>,
    max_per_tensor: usize,
    mut loss: impl FnMut(&ParamStore<f64>) -> f64,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for k in 0..params.len() {
        let len = params.values()[k].data.len();
        let stride = len.div_ceil(max_per_tensor.max(1)).max(1);
        for i in (0..len).step_by(stride) {
            let orig = params.values()[k].data[i];
            params.values_mut()[k].data[i] = orig + STEP;
            let plus = loss(params);
            params.values_mut()[k].data[i] = orig - STEP;
            let minus = loss(params);
            params.values_mut()[k].data[i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = analytic.values()[k].data[i];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((params.names()[k].clone(), i, a, numeric));
            }
        }
    }
    report
}
