use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::diffmath::Var;

/// Factorized base distribution of the latent `y = g(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    Gaussian,
    /// Location 0, unit scale.
    Logistic,
}

impl BaseKind {
    pub fn log_density(self, y: ArrayView1<f64>) -> f64 {
        match self {
            BaseKind::Gaussian => -0.5 * y.dot(&y) - 0.5 * y.len() as f64 * (2.0 * PI).ln(),
            BaseKind::Logistic => y.iter().map(|&v| logistic_log_density(v)).sum(),
        }
    }

    /// Row-wise log-density of a b×n node, as b×1.
    pub fn log_density_tape<'t>(self, y: Var<'t>) -> Var<'t> {
        let n = y.shape().1 as f64;
        match self {
            BaseKind::Gaussian => y
                .square()
                .sum_cols()
                .scale(-0.5)
                .add_scalar(-0.5 * n * (2.0 * PI).ln()),
            // log σ'(y) = −y − 2·softplus(−y)
            BaseKind::Logistic => (-y - (-y).softplus().scale(2.0)).sum_cols(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, count: usize, n: usize, rng: &mut R) -> Array2<f64> {
        match self {
            BaseKind::Gaussian => Array2::from_shape_simple_fn((count, n), || rng.sample(StandardNormal)),
            BaseKind::Logistic => {
                let u = Uniform::new(f64::EPSILON, 1.0).expect("valid range");
                Array2::from_shape_simple_fn((count, n), || {
                    let p: f64 = rng.sample(u);
                    (p / (1.0 - p)).ln()
                })
            }
        }
    }
}

fn logistic_log_density(v: f64) -> f64 {
    let a = v.abs();
    -a - 2.0 * (-a).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::Tape;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn densities_at_origin() {
        let z = array![0.0, 0.0];
        assert_abs_diff_eq!(BaseKind::Gaussian.log_density(z.view()), -(2.0 * PI).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(BaseKind::Logistic.log_density(z.view()), 2.0 * 0.25f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn tape_matches_plain() {
        let y = array![[0.3, -2.0, 5.0], [40.0, -40.0, 0.0]];
        for base in [BaseKind::Gaussian, BaseKind::Logistic] {
            let tape = Tape::new();
            let v = base.log_density_tape(tape.constant(y.clone())).value();
            for (i, row) in y.rows().into_iter().enumerate() {
                assert_abs_diff_eq!(v[[i, 0]], base.log_density(row), epsilon = 1e-12);
            }
        }
    }
}
