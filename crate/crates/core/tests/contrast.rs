use ima_core::contrast::*;
use ima_core::diffmath::linalg::random_orthogonal;
use ima_core::diffmath::Matrix;
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(n: usize) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(-3.0f64..3.0, n * n).prop_map(move |v| Array2::from_shape_vec((n, n), v).unwrap())
}

proptest! {
    #[test]
    fn contrast_is_nonnegative(m in (2usize..=5).prop_flat_map(matrix)) {
        if let Ok(c) = cima_local(m.view()) {
            prop_assert!(c >= -1e-12);
        }
    }

    #[test]
    fn contrast_ignores_column_scaling_and_permutation(
        m in matrix(4),
        d in proptest::collection::vec(0.1f64..5.0, 4),
        signs in proptest::collection::vec(any::<bool>(), 4),
        perm in Just((0..4).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        if let Ok(c) = cima_local(m.view()) {
            let mut dp = Matrix::zeros((4, 4));
            for i in 0..4 {
                dp[[i, perm[i]]] = if signs[i] { d[i] } else { -d[i] };
            }
            let c2 = cima_local(m.dot(&dp).view()).unwrap();
            prop_assert!((c - c2).abs() < 1e-10 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn two_dimensional_identities(m in matrix(2), lambda in prop_oneof![Just(0.0), Just(0.5), Just(1.0)], base in -5.0f64..0.0) {
        if let Ok(d) = decompose_2d(m.view(), base, lambda) {
            let c = cima_local(m.view()).unwrap();
            prop_assert!((c + d.theta.sin().abs().ln()).abs() < 1e-9);
            prop_assert!((d.log_abs_det() - (d.norm_a.ln() + d.norm_b.ln() + d.term_iii)).abs() < 1e-9);
            let direct = base - d.log_abs_det() - lambda * c;
            prop_assert!((d.regularized_likelihood() - direct).abs() < 1e-9);
        }
    }
}

#[test]
fn orthogonal_times_diagonal_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in 2..=5 {
        for k in 0..200 {
            let o = random_orthogonal(n, &mut rng);
            let d = Matrix::from_diag(&ndarray::Array1::from_shape_fn(n, |i| 0.2 + (i + k) as f64 * 0.3));
            assert!(cima_local(o.dot(&d).view()).unwrap() < 1e-12);
        }
    }
}

#[test]
fn global_contrast_needs_two_points() {
    let pts = ndarray::array![[0.0, 1.0]];
    assert!(cima_global(|_| Ok(Matrix::eye(2)), pts.view()).is_err());
    let pts = ndarray::array![[0.0, 1.0], [2.0, 3.0]];
    let est = cima_global(|_| Ok(Matrix::eye(2)), pts.view()).unwrap();
    assert_eq!((est.value, est.std_error, est.sample_count), (0.0, 0.0, 2));
}

#[test]
fn isoperimetric_minimum_at_orthogonal_columns() {
    let r = isoperimetric_check(2.0, 10_000, 1).unwrap();
    assert!(r.passed, "{r:?}");
}
