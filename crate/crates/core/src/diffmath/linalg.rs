//! Dense linear algebra for the small square matrices that appear as
//! Jacobians (n ≤ 5 in every experiment, comfortably correct up to ~32).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Matrices whose reciprocal 1-norm condition number falls below this are
/// treated as singular.
pub const SINGULAR_THRESHOLD: f64 = 1e-12;

/// LU factorization with partial pivoting, `P·A = L·U`, stored packed.
#[derive(Debug, Clone)]
pub struct Lu {
    packed: Matrix,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn new(a: ArrayView2<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::ShapeMismatch {
                op: "lu",
                lhs: a.dim(),
                rhs: (n, n),
            });
        }
        let mut lu = a.to_owned();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let mut p = k;
            let mut best = lu[[k, k]].abs();
            for i in k + 1..n {
                let v = lu[[i, k]].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if p != k {
                for j in 0..n {
                    lu.swap([k, j], [p, j]);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let pivot = lu[[k, k]];
            if pivot == 0.0 {
                continue;
            }
            for i in k + 1..n {
                let f = lu[[i, k]] / pivot;
                lu[[i, k]] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        lu[[i, j]] -= f * lu[[k, j]];
                    }
                }
            }
        }
        Ok(Lu {
            packed: lu,
            perm,
            sign,
        })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn det(&self) -> f64 {
        self.sign * self.packed.diag().iter().product::<f64>()
    }

    /// `(log|det|, sign)`, computed from the pivots so it does not underflow.
    pub fn log_abs_det(&self) -> (f64, f64) {
        let mut acc = 0.0;
        let mut sign = self.sign;
        for &d in self.packed.diag() {
            acc += d.abs().ln();
            if d < 0.0 {
                sign = -sign;
            }
        }
        (acc, sign)
    }

    pub fn is_exactly_singular(&self) -> bool {
        self.packed.diag().iter().any(|&d| d == 0.0)
    }

    pub fn solve(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let n = self.dim();
        let mut x: Array1<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.packed[[i, j]] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.packed[[i, j]] * x[j];
            }
            x[i] = s / self.packed[[i, i]];
        }
        x
    }

    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let mut inv = Matrix::zeros((n, n));
        let mut e = Array1::zeros(n);
        for j in 0..n {
            e.fill(0.0);
            e[j] = 1.0;
            inv.column_mut(j).assign(&self.solve(e.view()));
        }
        inv
    }
}

fn one_norm(a: ArrayView2<f64>) -> f64 {
    a.axis_iter(Axis(1))
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Factorizes `a` and rejects it when it is numerically singular.
///
/// The test uses the reciprocal condition number rather than the raw
/// determinant, so deep but well-shaped Jacobians with tiny determinants
/// (or long, nearly collinear columns) are still accepted.
pub fn checked_lu(a: ArrayView2<f64>) -> Result<Lu> {
    let lu = Lu::new(a)?;
    let (log_det, _) = lu.log_abs_det();
    let condition = if lu.is_exactly_singular() || !log_det.is_finite() {
        f64::INFINITY
    } else {
        one_norm(a) * one_norm(lu.inverse().view())
    };
    if !(condition.is_finite() && 1.0 / condition >= SINGULAR_THRESHOLD) {
        return Err(Error::SingularJacobian {
            det: lu.det(),
            condition,
        });
    }
    Ok(lu)
}

pub fn logabsdet(a: ArrayView2<f64>) -> Result<f64> {
    Ok(checked_lu(a)?.log_abs_det().0)
}

pub fn matinv(a: ArrayView2<f64>) -> Result<Matrix> {
    Ok(checked_lu(a)?.inverse())
}

pub fn max_abs_diff(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Householder QR returning the orthogonal factor with the signs fixed so
/// that `R` has a positive diagonal. For a Gaussian input this is a
/// Haar-distributed orthogonal matrix.
pub fn orthogonal_factor(a: ArrayView2<f64>) -> Matrix {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "orthogonal_factor expects a square matrix");
    let mut r = a.to_owned();
    let mut q = Matrix::eye(n);
    for k in 0..n.saturating_sub(1) {
        let x = r.slice(ndarray::s![k.., k]).to_owned();
        let norm = x.dot(&x).sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x;
        v[0] -= alpha;
        let vnorm2 = v.dot(&v);
        if vnorm2 == 0.0 {
            continue;
        }
        // R <- H R, Q <- Q H with H = I - 2 v vᵀ / vᵀv acting on rows/cols k..
        for j in 0..n {
            let s: f64 = (k..n).map(|i| v[i - k] * r[[i, j]]).sum::<f64>() * 2.0 / vnorm2;
            for i in k..n {
                r[[i, j]] -= s * v[i - k];
            }
        }
        for i in 0..n {
            let s: f64 = (k..n).map(|j| q[[i, j]] * v[j - k]).sum::<f64>() * 2.0 / vnorm2;
            for j in k..n {
                q[[i, j]] -= s * v[j - k];
            }
        }
    }
    for k in 0..n {
        if r[[k, k]] < 0.0 {
            q.column_mut(k).mapv_inplace(|v| -v);
        }
    }
    q
}

pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Matrix {
    let g = Matrix::from_shape_simple_fn((n, n), || rng.sample(StandardNormal));
    orthogonal_factor(g.view())
}

/// Largest singular value by power iteration on `WᵀW`, warm-started from
/// (and updating) the right singular vector estimate `v`.
pub fn power_iteration(w: ArrayView2<f64>, v: &mut Array1<f64>, iters: usize) -> f64 {
    debug_assert_eq!(v.len(), w.ncols());
    if v.dot(v) == 0.0 {
        v.fill(1.0);
    }
    let mut sigma = 0.0;
    for _ in 0..iters.max(1) {
        let nv = v.dot(v).sqrt();
        v.mapv_inplace(|x| x / nv);
        let u = w.dot(v);
        sigma = u.dot(&u).sqrt();
        if sigma == 0.0 {
            return 0.0;
        }
        let next = w.t().dot(&u);
        let nn = next.dot(&next).sqrt();
        if nn == 0.0 {
            return 0.0;
        }
        *v = next / nn;
    }
    let u = w.dot(v);
    sigma.max(u.dot(&u).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn logabsdet_closed_forms() {
        assert_abs_diff_eq!(logabsdet(Matrix::eye(3).view()).unwrap(), 0.0);
        let d = array![[2.0, 0.0], [0.0, 3.0]];
        assert_abs_diff_eq!(logabsdet(d.view()).unwrap(), 6f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(6f64.ln(), 1.7918, epsilon = 1e-4);
    }

    #[test]
    fn singular_is_rejected() {
        let s = array![[1.0, 2.0], [2.0, 4.0]];
        match logabsdet(s.view()) {
            Err(Error::SingularJacobian { condition, .. }) => assert!(condition > 1e12),
            other => panic!("expected SingularJacobian, got {other:?}"),
        }
        assert!(matinv(Matrix::zeros((3, 3)).view()).is_err());
    }

    #[test]
    fn inverse_closed_form() {
        let a = array![[2.0, 0.0], [0.0, 4.0]];
        let inv = matinv(a.view()).unwrap();
        assert!(max_abs_diff(inv.view(), array![[0.5, 0.0], [0.0, 0.25]].view()) < 1e-15);
        assert!(max_abs_diff(matinv(Matrix::eye(4).view()).unwrap().view(), Matrix::eye(4).view()) == 0.0);
    }

    #[test]
    fn inverse_and_det_properties_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=6 {
            for _ in 0..50 {
                let a = Matrix::from_shape_simple_fn((n, n), || rng.sample(StandardNormal))
                    + Matrix::eye(n) * 3.0;
                let b = Matrix::from_shape_simple_fn((n, n), || rng.sample(StandardNormal))
                    + Matrix::eye(n) * 3.0;
                let ai = matinv(a.view()).unwrap();
                assert!(max_abs_diff(a.dot(&ai).view(), Matrix::eye(n).view()) < 1e-10);
                let aii = matinv(ai.view()).unwrap();
                assert!(max_abs_diff(aii.view(), a.view()) < 1e-8);
                let lab = logabsdet(a.dot(&b).view()).unwrap();
                let sum = logabsdet(a.view()).unwrap() + logabsdet(b.view()).unwrap();
                assert!((lab - sum).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn tiny_but_well_shaped_determinant_is_accepted() {
        let a = Matrix::eye(5) * 1e-4;
        assert_abs_diff_eq!(logabsdet(a.view()).unwrap(), 5.0 * 1e-4f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn orthogonal_factor_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 2..8 {
            let q = random_orthogonal(n, &mut rng);
            let qtq = q.t().dot(&q);
            assert!(max_abs_diff(qtq.view(), Matrix::eye(n).view()) < 1e-12);
        }
    }

    #[test]
    fn power_iteration_on_scaled_identity() {
        let w = Matrix::eye(4) * 2.0;
        let mut v = Array1::zeros(4);
        assert_abs_diff_eq!(power_iteration(w.view(), &mut v, 3), 2.0, epsilon = 1e-12);
        let d = array![[3.0, 0.0], [0.0, 1.0]];
        let mut v = array![1.0, 1.0];
        assert_abs_diff_eq!(power_iteration(d.view(), &mut v, 60), 3.0, epsilon = 1e-10);
    }
}
