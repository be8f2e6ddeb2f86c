//! Minimal reverse-mode differentiation over dense `f64` matrices.

pub mod gradcheck;
mod linalg;
mod params;
mod tape;

pub use linalg::checked_inverse;
pub use params::{ParamEntry, ParamGrads, ParamGroup, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};

/// Backpropagates `loss` and collects gradients for every parameter bound on
/// `tape`.
pub fn param_grads(tape: &Tape, loss: Var, store: &ParamStore) -> ParamGrads {
    let grads = tape.backward(loss);
    let mut out = ParamGrads::empty(store.len());
    for (pid, var) in tape.bound_params() {
        if let Some(g) = grads.get(var) {
            out.set(pid, g.clone());
        }
    }
    out
}
