//! Central finite-difference verification of tape gradients.

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{contract_err, Result};
use crate::scalar::Scalar;

/// Compares tape gradients of the scalar built by `f` against central
/// differences over every entry of every trainable parameter.
///
/// Returns the largest `|analytic - numeric| / max(1, |analytic|)`.
pub fn finite_diff_check<T, F>(store: &mut ParamStore<T>, eps: f64, f: F) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &ParamStore<T>) -> Result<Var>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return contract_err(format!("finite-difference eps {eps} outside [1e-7, 1e-4]"));
    }
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss)?;
    drop(tape);

    let eval = |store: &ParamStore<T>| -> Result<f64> {
        let mut tape = Tape::new();
        let l = f(&mut tape, store)?;
        Ok(tape.value(l).item().as_f64())
    };

    let mut worst = 0.0f64;
    for id in store.trainable_ids() {
        for i in 0..store.value(id).len() {
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[i].as_f64());
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = T::of(orig.as_f64() + eps);
            let up = eval(store);
            store.value_mut(id).data_mut()[i] = T::of(orig.as_f64() - eps);
            let down = eval(store);
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (up? - down?) / (2.0 * eps);
            let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
