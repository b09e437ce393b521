//! Central finite-difference gradient checker.
//!
//! Only forward evaluations are used to build the numeric estimate, so it is
//! independent of the backward code it checks.

use alloc::string::String;
use alloc::vec::Vec;

use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::TensorError;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst relative error over all checked scalars.
    pub max_rel_error: f64,
    /// Parameter holding the worst entry.
    pub worst_param: String,
    pub checked: usize,
}

/// `|a - n| / max(|a| + |n|, 1e-6)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = (libm::fabs(analytic) + libm::fabs(numeric)).max(1e-6);
    libm::fabs(analytic - numeric) / denom
}

/// Compares tape gradients of the scalar built by `f` with central
/// differences of step `h`. `limit` caps the number of scalars checked per
/// parameter (evenly strided) to bound runtime on larger models.
pub fn check<F>(
    store: &mut ParamStore,
    h: f64,
    limit: Option<usize>,
    mut f: F,
) -> Result<GradCheckReport, TensorError>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss, store)?;
    let mut eval = |store: &ParamStore| -> Result<f64, TensorError> {
        let mut t = Tape::inference();
        let v = f(&mut t, store)?;
        Ok(t.value(v).item())
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        checked: 0,
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let n = store.get(id).len();
        let stride = match limit {
            Some(l) if n > l => n.div_ceil(l),
            _ => 1,
        };
        for k in (0..n).step_by(stride) {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + h;
            let up = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig - h;
            let down = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(id).data()[k];
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = String::from(store.name(id));
            }
        }
    }
    Ok(report)
}
