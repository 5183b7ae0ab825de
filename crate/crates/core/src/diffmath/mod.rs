//! Small dense linear algebra and a first-order differentiation engine.

mod check;
pub mod linalg;
mod tape;

use ndarray::Array2;

pub use check::{compare_with_finite_differences, finite_diff_check, CheckReport};
pub use linalg::{logabsdet, matinv, Lu, Matrix};
pub use tape::{DifferentiableScalar, Gradients, Tape, Unary, Var};

use crate::error::{Error, Result};

/// Exact gradient of a scalar loss at `params`.
///
/// `loss_fn` receives the parameters as a single 1×p tracked row and must
/// return a 1×1 node. Returns `(loss, gradient)`.
pub fn grad<F>(loss_fn: F, params: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let p = tape.param(row(params));
    let loss = loss_fn(&tape, p)?;
    if loss.shape() != (1, 1) {
        return Err(Error::invalid(format!(
            "loss must be a scalar, got shape {:?}",
            loss.shape()
        )));
    }
    let value = loss.item();
    if !value.is_finite() {
        return Err(Error::NonFinite {
            what: "loss".into(),
            index: 0,
        });
    }
    let g = tape.gradients(loss, &[p])?;
    Ok((value, g[0].iter().copied().collect()))
}

/// Exact Jacobian of `vector_fn: Rⁿ → Rⁿ` at `point`, one reverse sweep per
/// output coordinate.
pub fn jacobian<F>(vector_fn: F, point: &[f64]) -> Result<Matrix>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let n = point.len();
    if n == 0 {
        return Err(Error::invalid("jacobian of a zero-dimensional map"));
    }
    let tape = Tape::new();
    let x = tape.param(row(point));
    let y = vector_fn(&tape, x)?;
    let out = y.value();
    if out.len() != n {
        return Err(Error::invalid(format!(
            "expected {n} outputs, got {}",
            out.len()
        )));
    }
    if let Some(index) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "jacobian output".into(),
            index,
        });
    }
    let mut jac = Matrix::zeros((n, n));
    for i in 0..n {
        let mut seed = Array2::zeros(y.shape());
        seed.as_slice_mut().expect("fresh array is contiguous")[i] = 1.0;
        let g = tape.backward(y, seed)?.wrt(x);
        for (j, v) in g.iter().enumerate() {
            jac[[i, j]] = *v;
        }
    }
    Ok(jac)
}

pub(crate) fn row(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape")
}
