//! Finite-difference verification of analytic gradients.

use super::{Grads, ParameterStore};

/// Denominator floor for relative errors, so that entries whose true gradient is
/// essentially zero are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// `(index, analytic, numeric)` of the entry with the largest relative error.
    pub worst: Option<(usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error <= tol
    }

    fn record(&mut self, index: usize, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        self.checked += 1;
        self.max_abs_error = self.max_abs_error.max(abs);
        if self.worst.is_none() || rel > self.max_rel_error {
            self.max_rel_error = rel;
            self.worst = Some((index, analytic, numeric));
        }
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
        if other.worst.is_some() && (self.worst.is_none() || other.max_rel_error > self.max_rel_error) {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

/// Compares `analytic` with central differences of `f` at `x`.
pub fn grad_check(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], h: f64) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        report.record(i, analytic[i], (up - down) / (2.0 * h));
    }
    report
}

/// Checks parameter gradients by perturbing the store in place.
///
/// At most `max_per_param` entries of each parameter are probed, spread evenly across it.
/// The flat index in the report counts across all parameters in store order.
pub fn grad_check_params(
    store: &mut ParameterStore,
    analytic: &Grads,
    mut loss: impl FnMut(&ParameterStore) -> f64,
    h: f64,
    max_per_param: usize,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    let mut offset = 0;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).len();
        let stride = n.div_ceil(max_per_param.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + h;
            let up = loss(store);
            store.get_mut(id).data_mut()[i] = orig - h;
            let down = loss(store);
            store.get_mut(id).data_mut()[i] = orig;
            report.record(offset + i, analytic.get(id).data()[i], (up - down) / (2.0 * h));
        }
        offset += n;
    }
    report
}
