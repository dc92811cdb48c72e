//! Central finite differences over stored parameters, used as an
//! independent oracle for the tape's analytic gradients.

use super::param::{ParamId, ParamStore};
use super::tensor::Tensor;

/// Central-difference gradient of `loss` with respect to one parameter.
/// The parameter value is restored exactly afterwards.
pub fn finite_difference(
    store: &mut ParamStore,
    id: ParamId,
    step: f64,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> Tensor {
    let n = store.value(id).len();
    let mut out = Tensor::zeros(store.value(id).shape());
    for k in 0..n {
        let orig = store.value(id).data()[k];
        store.value_mut(id).data_mut()[k] = orig + step;
        let plus = loss(store);
        store.value_mut(id).data_mut()[k] = orig - step;
        let minus = loss(store);
        store.value_mut(id).data_mut()[k] = orig;
        out.data_mut()[k] = (plus - minus) / (2.0 * step);
    }
    out
}

/// `max_i |a_i - b_i| / max(‖a‖∞, ‖b‖∞)`, with a floor on the denominator so
/// that two all-zero gradients compare equal.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let inf = |t: &Tensor| t.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let denom = inf(analytic).max(inf(numeric)).max(1e-8);
    analytic.max_abs_diff(numeric) / denom
}
