//! Central finite-difference gradient checks.

use super::{ParamStore, Tensor};

/// Gradients smaller than this are compared in absolute terms: the relative
/// error denominator never drops below it.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `name[index]` of the worst entry.
    pub worst: String,
    pub checked: usize,
}

impl GradCheckReport {
    fn record(&mut self, err: f64, label: impl FnOnce() -> String) {
        self.checked += 1;
        if err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst = label();
        }
    }
}

/// Compares the gradients already accumulated in `store` against central
/// differences of `loss` for every scalar parameter.
pub fn check_param_grads(
    store: &mut ParamStore,
    eps: f64,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    for name in store.names() {
        let n = store.value(&name).expect("listed").len();
        for i in 0..n {
            let analytic = store.param(&name).expect("listed").grad.data()[i];
            let orig = store.value(&name).expect("listed").data()[i];
            store.param_mut(&name).expect("listed").value.data_mut()[i] = orig + eps;
            let plus = loss(store);
            store.param_mut(&name).expect("listed").value.data_mut()[i] = orig - eps;
            let minus = loss(store);
            store.param_mut(&name).expect("listed").value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            report.record(relative_error(analytic, numeric), || format!("{name}[{i}]"));
        }
    }
    report
}

/// Compares an analytic input gradient against central differences.
pub fn check_input_grad(
    x: &Tensor,
    analytic: &Tensor,
    eps: f64,
    mut loss: impl FnMut(&Tensor) -> f64,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = loss(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = loss(&probe);
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        report.record(relative_error(analytic.data()[i], numeric), || format!("input[{i}]"));
    }
    report
}
