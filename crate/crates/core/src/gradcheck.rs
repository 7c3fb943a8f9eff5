//! Central finite-difference gradient checks.
//!
//! These routines only ever evaluate forward values, so they serve as an
//! oracle that is independent of the backward pass they are checking.

use crate::error::Result;
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;

/// Magnitude below which errors are measured absolutely rather than relatively.
pub const MAGNITUDE_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(label, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, f64, f64)>,
}

impl CheckReport {
    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.checked += 1;
        if e >= self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = e;
            self.worst = Some((label(), analytic, numeric));
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error <= tol
    }

    pub fn merge(&mut self, other: CheckReport) {
        self.checked += other.checked;
        if other.max_rel_error >= self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst.or(self.worst.take());
        }
    }
}

/// Compare `analytic` with central differences of `f` at `x` for every entry of `x`.
pub fn check_tensor(x: &Tensor, analytic: &Tensor, mut f: impl FnMut(&Tensor) -> Result<f64>) -> Result<CheckReport> {
    let mut report = CheckReport::default();
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + STEP;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - STEP;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        report.record(|| format!("x[{i}]"), analytic.data()[i], numeric);
    }
    Ok(report)
}

/// Check selected parameter entries. `loss` re-evaluates the forward pass on the
/// (temporarily perturbed) store.
pub fn check_params(
    store: &mut ParamStore,
    analytic: &Gradients,
    entries: &[(ParamId, usize)],
    mut loss: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<CheckReport> {
    let mut report = CheckReport::default();
    for &(id, i) in entries {
        let orig = store.value(id).data()[i];
        store.value_mut(id).data_mut()[i] = orig + STEP;
        let up = loss(store)?;
        store.value_mut(id).data_mut()[i] = orig - STEP;
        let down = loss(store)?;
        store.value_mut(id).data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let a = analytic.get(id).map_or(0.0, |g| g.data()[i]);
        report.record(|| format!("{}[{i}]", store.name(id)), a, numeric);
    }
    Ok(report)
}
