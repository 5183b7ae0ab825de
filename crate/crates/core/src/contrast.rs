//! The IMA contrast: how far a Jacobian's columns are from being
//! orthogonal, measured as `Σᵢ log‖Jᵢ‖ − log|det J|` (nats).
//!
//! Also hosts the 2D decomposition of the regularized likelihood into the
//! base-density term, the column-norm term and the `log|sin θ|` term.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::{Array1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffmath::linalg::{checked_lu, Matrix};
use crate::error::{Error, Result};

/// Monte-Carlo estimate of the global contrast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastEstimate {
    pub value: f64,
    pub std_error: f64,
    pub sample_count: usize,
}

impl ContrastEstimate {
    /// Mean and standard error of `values`, summed pairwise in index order so
    /// the result does not depend on how the values were produced.
    pub fn from_samples(values: &[f64]) -> Self {
        let m = values.len();
        if m == 0 {
            return Self {
                value: f64::NAN,
                std_error: f64::NAN,
                sample_count: 0,
            };
        }
        let mean = pairwise_sum(values) / m as f64;
        let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = if m > 1 {
            pairwise_sum(&dev) / (m - 1) as f64
        } else {
            0.0
        };
        Self {
            value: mean,
            std_error: (var / m as f64).sqrt(),
            sample_count: m,
        }
    }
}

/// Tree reduction in index order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

fn column_norms(j: ArrayView2<f64>) -> Array1<f64> {
    j.columns().into_iter().map(|c| c.dot(&c).sqrt()).collect()
}

/// `Σᵢ log‖∂f/∂sᵢ‖ − log|det J|`; zero exactly when the columns are
/// orthogonal.
pub fn cima_local(j: ArrayView2<f64>) -> Result<f64> {
    let lu = checked_lu(j)?;
    let norms: f64 = column_norms(j).iter().map(|v| v.ln()).sum();
    Ok(norms - lu.log_abs_det().0)
}

/// Sample mean and standard error of [`cima_local`] over the rows of
/// `points`, with `jacobian_at` supplying the Jacobian at each point.
pub fn cima_global<F>(jacobian_at: F, points: ArrayView2<f64>) -> Result<ContrastEstimate>
where
    F: Fn(ndarray::ArrayView1<f64>) -> Result<Matrix>,
{
    if points.nrows() < 2 {
        return Err(Error::invalid("the global contrast needs at least two points"));
    }
    let values = points
        .rows()
        .into_iter()
        .enumerate()
        .map(|(index, p)| {
            jacobian_at(p)
                .and_then(|j| cima_local(j.view()))
                .map_err(|e| Error::AtPoint {
                    index,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ContrastEstimate::from_samples(&values))
}

/// Terms of the regularized single-point log-likelihood in two dimensions.
///
/// With `a`, `b` the columns of the inverse-map Jacobian and `θ` the angle
/// between them:
/// `term_i − term_ii − (1 − λ)·term_iii`, where `term_i = log p(y)`,
/// `term_ii = log‖a‖ + log‖b‖` and `term_iii = log|sin θ|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decomposition2D {
    pub norm_a: f64,
    pub norm_b: f64,
    pub theta: f64,
    pub term_i: f64,
    pub term_ii: f64,
    pub term_iii: f64,
    pub lambda: f64,
}

impl Decomposition2D {
    /// `log|det J| = log‖a‖ + log‖b‖ + log|sin θ|`.
    pub fn log_abs_det(&self) -> f64 {
        self.term_ii + self.term_iii
    }

    pub fn regularized_likelihood(&self) -> f64 {
        self.term_i - self.term_ii - (1.0 - self.lambda) * self.term_iii
    }

    /// In 2D the contrast reduces to `−log|sin θ|`.
    pub fn cima(&self) -> f64 {
        -self.term_iii
    }
}

pub fn decompose_2d(j: ArrayView2<f64>, log_base_density: f64, lambda: f64) -> Result<Decomposition2D> {
    if j.dim() != (2, 2) {
        return Err(Error::invalid("decompose_2d expects a 2×2 Jacobian"));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid("lambda must lie in [0, 1]"));
    }
    checked_lu(j)?;
    let a = j.column(0);
    let b = j.column(1);
    let norm_a = a.dot(&a).sqrt();
    let norm_b = b.dot(&b).sqrt();
    let det = j[[0, 0]] * j[[1, 1]] - j[[0, 1]] * j[[1, 0]];
    let theta = det.abs().atan2(a.dot(&b));
    Ok(Decomposition2D {
        norm_a,
        norm_b,
        theta,
        term_i: log_base_density,
        term_ii: norm_a.ln() + norm_b.ln(),
        // |sin θ| = |det| / (‖a‖‖b‖), taken this way to stay exact near 0 and π
        term_iii: det.abs().ln() - norm_a.ln() - norm_b.ln(),
        lambda,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogSinRow {
    pub theta: f64,
    pub log_sin: f64,
    /// `d/dθ log|sin θ| = cot θ`
    pub grad: f64,
}

pub fn log_sin_theta_profile(thetas: &[f64]) -> Result<Vec<LogSinRow>> {
    thetas
        .iter()
        .map(|&theta| {
            if !(theta > 0.0 && theta < PI) {
                return Err(Error::invalid(format!("theta {theta} outside (0, π)")));
            }
            Ok(LogSinRow {
                theta,
                log_sin: theta.sin().abs().ln(),
                grad: 1.0 / theta.tan(),
            })
        })
        .collect()
}

pub fn write_profile_csv<W: Write>(rows: &[LogSinRow], mut w: W) -> Result<()> {
    writeln!(w, "theta,log_sin,grad")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.theta, r.log_sin, r.grad)?;
    }
    Ok(())
}

/// Brute-force look at the parallelogram isoperimetric argument: among
/// Jacobians of fixed `|det|`, `log‖a‖ + log‖b‖` is minimized by orthogonal
/// columns and bounded below by `log(area)`.
#[derive(Debug, Clone, Serialize)]
pub struct IsoperimetricReport {
    pub area: f64,
    pub trials: usize,
    pub lower_bound: f64,
    pub min_norm_sum: f64,
    /// Angle between the columns of the minimizing sample.
    pub argmin_theta: f64,
    /// Samples that dipped below the bound by more than 1e-12.
    pub violations: usize,
    /// Whether the minimizer's columns are orthogonal to within 1e-3 rad.
    pub minimizer_near_orthogonal: bool,
    pub passed: bool,
}

pub fn isoperimetric_check(area: f64, trials: usize, seed: u64) -> Result<IsoperimetricReport> {
    if !(area > 0.0) {
        return Err(Error::invalid("area must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lower_bound = area.ln();
    let mut min_sum = f64::INFINITY;
    let mut argmin_theta = f64::NAN;
    let mut violations = 0;
    for _ in 0..trials {
        let mut j = Matrix::from_shape_simple_fn((2, 2), || rng.sample(StandardNormal));
        let det = j[[0, 0]] * j[[1, 1]] - j[[0, 1]] * j[[1, 0]];
        if det.abs() < 1e-9 {
            continue;
        }
        j *= (area / det.abs()).sqrt();
        let d = decompose_2d(j.view(), 0.0, 0.0)?;
        if d.term_ii < lower_bound - 1e-12 {
            violations += 1;
        }
        if d.term_ii < min_sum {
            min_sum = d.term_ii;
            argmin_theta = d.theta;
        }
    }
    let minimizer_near_orthogonal = (argmin_theta - PI / 2.0).abs() < 1e-3;
    // Tolerance of the brute-force comparison.
    let passed = violations == 0 && minimizer_near_orthogonal && (min_sum - lower_bound).abs() < 1e-3;
    Ok(IsoperimetricReport {
        area,
        trials,
        lower_bound,
        min_norm_sum: min_sum,
        argmin_theta,
        violations,
        minimizer_near_orthogonal,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn local_contrast_closed_forms() {
        assert_abs_diff_eq!(cima_local(Matrix::eye(3).view()).unwrap(), 0.0);
        let shear = array![[1.0, 1.0], [0.0, 1.0]];
        assert_abs_diff_eq!(cima_local(shear.view()).unwrap(), 0.5 * 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(0.5 * 2f64.ln(), 0.34657, epsilon = 1e-5);
        let c = (0.3f64).cos();
        let s = (0.3f64).sin();
        let od = array![[c, -s], [s, c]].dot(&array![[2.0, 0.0], [0.0, 3.0]]);
        assert!(cima_local(od.view()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn local_contrast_rejects_singular() {
        assert!(matches!(
            cima_local(array![[1.0, 2.0], [2.0, 4.0]].view()),
            Err(Error::SingularJacobian { .. })
        ));
    }

    #[test]
    fn global_contrast_of_constant_fields() {
        let pts = Matrix::from_shape_fn((10, 2), |(i, j)| (i + j) as f64 * 0.1);
        let e = cima_global(|_| Ok(Matrix::eye(2)), pts.view()).unwrap();
        assert_eq!((e.value, e.std_error, e.sample_count), (0.0, 0.0, 10));
        let shear = array![[1.0, 1.0], [0.0, 1.0]];
        let e = cima_global(|_| Ok(shear.clone()), pts.view()).unwrap();
        assert_abs_diff_eq!(e.value, 0.34657, epsilon = 1e-5);
        assert!(e.std_error < 1e-15);
    }

    #[test]
    fn global_contrast_names_the_singular_point() {
        let pts = Matrix::from_shape_fn((5, 2), |(i, _)| i as f64);
        let err = cima_global(
            |p| {
                if p[0] == 3.0 {
                    Ok(Matrix::zeros((2, 2)))
                } else {
                    Ok(Matrix::eye(2))
                }
            },
            pts.view(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::AtPoint { index: 3, .. }));
        assert!(cima_global(|_| Ok(Matrix::eye(2)), Matrix::zeros((1, 2)).view()).is_err());
    }

    #[test]
    fn decomposition_examples() {
        let d = decompose_2d(array![[1.0, 0.0], [0.0, 2.0]].view(), 0.0, 0.5).unwrap();
        assert_eq!((d.norm_a, d.norm_b), (1.0, 2.0));
        assert_abs_diff_eq!(d.theta, PI / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.term_iii, 0.0, epsilon = 1e-15);

        let d = decompose_2d(array![[1.0, 1.0], [0.0, 1.0]].view(), 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(d.theta, PI / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.term_ii, 0.5 * 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(d.term_iii, -0.5 * 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(d.log_abs_det(), 0.0, epsilon = 1e-15);

        // θ = π/6 → contrast ln 2
        let t = PI / 6.0;
        let j = array![[1.0, t.cos()], [0.0, t.sin()]];
        let d = decompose_2d(j.view(), 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(d.cima(), 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(cima_local(j.view()).unwrap(), 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn decomposition_validates_inputs() {
        assert!(decompose_2d(Matrix::eye(3).view(), 0.0, 0.0).is_err());
        assert!(decompose_2d(Matrix::eye(2).view(), 0.0, 1.5).is_err());
        assert!(decompose_2d(array![[1.0, 1.0], [1.0, 1.0]].view(), 0.0, 0.0).is_err());
    }

    #[test]
    fn log_sin_profile_values() {
        let rows = log_sin_theta_profile(&[PI / 2.0, PI / 4.0, 0.01]).unwrap();
        assert_abs_diff_eq!(rows[0].log_sin, 0.0);
        assert_abs_diff_eq!(rows[0].grad, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rows[1].log_sin, -0.3466, epsilon = 1e-4);
        assert_abs_diff_eq!(rows[1].grad, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rows[2].grad, 99.9967, epsilon = 1e-4);
        assert!(log_sin_theta_profile(&[0.0]).is_err());
        assert!(log_sin_theta_profile(&[PI]).is_err());
        let mut buf = Vec::new();
        write_profile_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("theta,log_sin,grad\n"));
    }

    #[test]
    fn isoperimetric_bound() {
        let r = isoperimetric_check(1.0, 2000, 1).unwrap();
        assert_eq!(r.violations, 0);
        assert!(r.min_norm_sum >= -1e-12);
        let d = decompose_2d(Matrix::eye(2).view(), 0.0, 0.0).unwrap();
        assert_eq!(d.term_ii, 0.0);
        let r = isoperimetric_check(2.0, 10_000, 2).unwrap();
        assert!(r.passed, "{r:?}");
        assert!((r.min_norm_sum - 2f64.ln()).abs() < 1e-3);
        assert!(isoperimetric_check(0.0, 10, 0).is_err());
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
    }
}
