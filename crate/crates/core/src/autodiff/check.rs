//! Finite-difference oracle for gradient verification. Test support; the
//! implementation under test must never call into this.

use super::params::ParameterStore;
use super::tape::{Tape, Var};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Compares reverse-mode gradients of `build` (a fresh forward pass producing
/// a scalar) against central finite differences over every parameter entry.
/// Returns the maximum relative error, with a unit floor on the denominator
/// so near-zero gradients compare absolutely.
pub fn gradient_check(
    store: &mut ParameterStore,
    build: impl Fn(&mut Tape, &ParameterStore) -> Result<Var>,
) -> Result<f64> {
    let eval = |store: &ParameterStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = build(&mut tape, store)?;
        Ok(tape.value(out).item())
    };

    store.zero_grads();
    let mut tape = Tape::new();
    let out = build(&mut tape, store)?;
    tape.backward(out, store)?;

    let names: Vec<String> = store.names().map(String::from).collect();
    let mut worst = 0.0f64;
    for name in names {
        let id = store.id_of(&name).unwrap();
        let analytic = store.grad(id).clone();
        for i in 0..analytic.data.len() {
            store.nudge(id, i, FD_STEP);
            let plus = eval(store)?;
            store.nudge(id, i, -2.0 * FD_STEP);
            let minus = eval(store)?;
            store.nudge(id, i, FD_STEP);
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic.data[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    store.zero_grads();
    Ok(worst)
}
