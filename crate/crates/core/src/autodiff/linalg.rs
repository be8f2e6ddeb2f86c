use ndarray::Array2;

use crate::error::{Error, Result};

fn one_norm(a: &Array2<f64>) -> f64 {
    a.columns()
        .into_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Gauss-Jordan inversion with partial pivoting.
///
/// Fails when a pivot vanishes or when the reciprocal 1-norm condition
/// estimate `1 / (‖A‖₁‖A⁻¹‖₁)` is below `min_rcond`.
pub fn checked_inverse(a: &Array2<f64>, min_rcond: f64) -> Result<Array2<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Argument(format!(
            "cannot invert a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if n == 0 {
        return Ok(Array2::zeros((0, 0)));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let mut m = a.clone();
    let mut inv = Array2::<f64>::eye(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[[i, col]].abs().total_cmp(&m[[j, col]].abs()))
            .expect("non-empty pivot range");
        if m[[pivot, col]] == 0.0 {
            return Err(Error::Numerical(format!(
                "singular matrix (zero pivot in column {col}), condition estimate inf"
            )));
        }
        if pivot != col {
            for k in 0..n {
                m.swap([pivot, k], [col, k]);
                inv.swap([pivot, k], [col, k]);
            }
        }
        let p = m[[col, col]];
        for k in 0..n {
            m[[col, k]] /= p;
            inv[[col, k]] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[[r, col]];
            if f == 0.0 {
                continue;
            }
            for k in 0..n {
                m[[r, k]] -= f * m[[col, k]];
                inv[[r, k]] -= f * inv[[col, k]];
            }
        }
    }
    let cond = one_norm(a) * one_norm(&inv);
    if !cond.is_finite() || 1.0 / cond < min_rcond {
        return Err(Error::Numerical(format!(
            "near-singular matrix, condition estimate {cond:.3e}"
        )));
    }
    Ok(inv)
}
