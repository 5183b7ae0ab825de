use serde::Serialize;

use super::{grad, Tape, Var};
use crate::error::{Error, Result};

/// Outcome of comparing an analytic gradient against central differences.
///
/// The relative error of coordinate `i` is
/// `|aᵢ − nᵢ| / max(|aᵢ|, |nᵢ|, 1e-4 · max(1, ‖n‖∞))`: components that are
/// tiny compared with the rest of the gradient are judged on the
/// gradient's own scale rather than on their (noise-dominated) magnitude.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub step: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Compares `analytic` against central differences of `value_fn`.
pub fn compare_with_finite_differences<V>(
    value_fn: V,
    analytic: &[f64],
    params: &[f64],
    step: f64,
    tol: f64,
) -> Result<CheckReport>
where
    V: Fn(&[f64]) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    if analytic.len() != params.len() {
        return Err(Error::invalid("gradient and parameter lengths differ"));
    }
    let mut numeric = Vec::with_capacity(params.len());
    let mut p = params.to_vec();
    for i in 0..params.len() {
        let orig = p[i];
        p[i] = orig + step;
        let fp = value_fn(&p)?;
        p[i] = orig - step;
        let fm = value_fn(&p)?;
        p[i] = orig;
        numeric.push((fp - fm) / (2.0 * step));
    }
    let scale = numeric.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-4 * scale;
    let mut report = CheckReport {
        max_rel_error: 0.0,
        worst_coordinate: 0,
        analytic: analytic.first().copied().unwrap_or(0.0),
        numeric: numeric.first().copied().unwrap_or(0.0),
        step,
        tol,
        passed: true,
    };
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if !(rel <= report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_coordinate = i;
            report.analytic = a;
            report.numeric = n;
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}

/// Central-difference check of [`grad`] for a tape-built scalar loss.
pub fn finite_diff_check<F>(loss_fn: F, params: &[f64], step: f64, tol: f64) -> Result<CheckReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let (_, analytic) = grad(&loss_fn, params)?;
    compare_with_finite_differences(
        |p| {
            let tape = Tape::new();
            let x = tape.constant(super::row(p));
            Ok(loss_fn(&tape, x)?.item())
        },
        &analytic,
        params,
        step,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn quadratic_passes_tightly() {
        let r = finite_diff_check(|_, x| Ok(x.square().sum()), &[3.0, -1.0, 0.5], 1e-5, 1e-8).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn broken_gradient_is_caught() {
        let params = [0.3, -0.7, 1.1, 2.0];
        let value = |p: &[f64]| Ok(p.iter().map(|v| v.tanh() * v).sum::<f64>());
        let (_, mut g) = grad(|_, x| Ok((x.tanh() * x).sum()), &params).unwrap();
        assert!(compare_with_finite_differences(value, &g, &params, 1e-5, 1e-4).unwrap().passed);
        g[2] = 0.0;
        let r = compare_with_finite_differences(value, &g, &params, 1e-5, 1e-4).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst_coordinate, 2);
    }

    #[test]
    fn inverse_composite_matches() {
        // sum of squares of the inverse of a parameterized 3×3 matrix
        let params = [2.0, 0.3, -0.1, 0.4, 1.5, 0.2, -0.3, 0.1, 1.8];
        let r = finite_diff_check(
            |t, p| {
                let a = p.reshape(3, 3);
                let inv = a.matinv()?;
                let w = t.constant(Array2::from_shape_fn((3, 3), |(i, j)| 1.0 + (i * 3 + j) as f64));
                Ok((inv.square() * w).sum())
            },
            &params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn rejects_bad_step() {
        assert!(finite_diff_check(|_, x| Ok(x.sum()), &[1.0], 0.0, 1e-4).is_err());
    }
}
