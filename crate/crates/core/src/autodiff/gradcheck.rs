//! Central finite-difference checks of tape gradients.

use super::{param_grads, ParamId, ParamStore, Tape, Var};
use crate::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Largest per-parameter `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub max_relative_error: f64,
    pub worst_param: String,
    pub scalars_checked: usize,
}

/// Compares the tape gradient of `loss` with central differences over every
/// scalar of the parameters in `ids` (all parameters when empty).
///
/// The error is measured per parameter tensor as a norm ratio, since
/// element-wise ratios are dominated by round-off on near-zero entries.
pub fn check_params<F>(store: &ParamStore, ids: &[ParamId], step: f64, loss: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let l = loss(&mut tape, s)?;
        Ok(tape.scalar(l))
    };
    let mut tape = Tape::new();
    let l = loss(&mut tape, store)?;
    let grads = param_grads(&tape, l, store);

    let ids: Vec<ParamId> = if ids.is_empty() { store.ids().collect() } else { ids.to_vec() };
    let mut probe = store.clone();
    let mut out = GradCheck {
        max_relative_error: 0.0,
        worst_param: String::new(),
        scalars_checked: 0,
    };
    for id in ids {
        let shape = store.value(id).dim();
        let analytic = grads.get(id).cloned().unwrap_or_else(|| ndarray::Array2::zeros(shape));
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for idx in ndarray::indices(shape) {
            let x = store.value(id)[idx];
            probe.value_mut(id)[idx] = x + step;
            let up = eval(&probe)?;
            probe.value_mut(id)[idx] = x - step;
            let down = eval(&probe)?;
            probe.value_mut(id)[idx] = x;
            let numeric = (up - down) / (2.0 * step);
            diff2 += (analytic[idx] - numeric).powi(2);
            a2 += analytic[idx].powi(2);
            n2 += numeric.powi(2);
            out.scalars_checked += 1;
        }
        let scale = a2.sqrt().max(n2.sqrt());
        let rel = if scale < 1e-12 { diff2.sqrt() } else { diff2.sqrt() / scale };
        if rel >= out.max_relative_error {
            out.max_relative_error = rel;
            out.worst_param = store.name(id).to_string();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamGroup;
    use ndarray::array;

    #[test]
    fn quadratic_is_exact_and_broken_gradient_is_caught() {
        let mut store = ParamStore::new();
        let w = store.add("w", ParamGroup::Other, array![[0.5, -1.5], [2.0, 0.25]]);
        let r = check_params(&store, &[], DEFAULT_STEP, |t, s| {
            let v = t.param(s, w);
            let sq = t.mul(v, v);
            Ok(t.sum_all(sq))
        })
        .unwrap();
        assert!(r.max_relative_error < 1e-8, "{r:?}");
        assert_eq!(r.scalars_checked, 4);

        // A leaf copy hides the dependency from the tape.
        let r = check_params(&store, &[w], DEFAULT_STEP, |t, s| {
            let v = t.leaf(s.value(w).clone());
            Ok(t.sum_all(v))
        })
        .unwrap();
        assert!(r.max_relative_error > 0.5);
    }
}
