//! Central finite-difference oracle for hand-derived gradients.
//!
//! Everything here runs in `f64` and only ever calls the scalar loss, so it
//! stays independent of the backward code it checks.

use crate::numerics::Tensor;
use crate::params::Parameterized;

/// Step used by every finite-difference check in the crate.
pub const STEP: f64 = 1e-5;

/// Magnitude below which gradients are compared on an absolute scale.
///
/// Parameters whose true gradient is zero (e.g. a dense bias feeding batch
/// normalization) produce pure round-off in the numeric estimate.
pub const REL_FLOOR: f64 = 1e-5;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

impl GradReport {
    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let e = rel_error(analytic, numeric);
        self.checked += 1;
        if e > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = e;
            self.worst = format!("{} (analytic {analytic:e}, numeric {numeric:e})", label());
        }
    }

    pub fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        if other.max_rel_error > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

/// Numeric gradient of `loss` with respect to a free tensor.
pub fn numeric_grad(x: &Tensor<f64>, mut loss: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + STEP;
        let up = loss(&probe);
        probe.data_mut()[i] = orig - STEP;
        let down = loss(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * STEP);
    }
    out
}

/// Compares an analytic input gradient against [`numeric_grad`].
pub fn check_tensor(
    label: &str,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    loss: impl FnMut(&Tensor<f64>) -> f64,
) -> GradReport {
    let numeric = numeric_grad(x, loss);
    let mut report = GradReport::default();
    for (i, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        report.record(|| format!("{label}[{i}]"), a, n);
    }
    report
}

/// Checks every parameter gradient accumulated in `model` against central
/// differences of `loss`.
///
/// `loss` must be a pure function of the parameter values (reseed any random
/// stream inside it). At most `max_per_param` elements of each tensor are
/// probed, spread evenly across the tensor.
pub fn check_params<M: Parameterized<f64>>(
    model: &mut M,
    max_per_param: usize,
    mut loss: impl FnMut(&mut M) -> f64,
) -> GradReport {
    let mut analytic: Vec<(String, Tensor<f64>)> = Vec::new();
    model.visit_params("", &mut |name, p| analytic.push((name.to_string(), p.grad.clone())));

    let mut report = GradReport::default();
    for (pi, (name, grad)) in analytic.iter().enumerate() {
        let n = grad.len();
        let stride = (n / max_per_param.max(1)).max(1);
        for ei in (0..n).step_by(stride) {
            let orig = param_element(model, pi, ei, None);
            param_element(model, pi, ei, Some(orig + STEP));
            let up = loss(model);
            param_element(model, pi, ei, Some(orig - STEP));
            let down = loss(model);
            param_element(model, pi, ei, Some(orig));
            let numeric = (up - down) / (2.0 * STEP);
            report.record(|| format!("{name}[{ei}]"), grad.data()[ei], numeric);
        }
    }
    report
}

/// Reads (and optionally overwrites) one element of the `index`-th parameter.
fn param_element<M: Parameterized<f64>>(model: &mut M, index: usize, elem: usize, set: Option<f64>) -> f64 {
    let mut seen = 0;
    let mut value = f64::NAN;
    model.visit_params_mut("", &mut |_, p| {
        if seen == index {
            value = p.value.data()[elem];
            if let Some(v) = set {
                p.value.data_mut()[elem] = v;
            }
        }
        seen += 1;
    });
    value
}
