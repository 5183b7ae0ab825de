use ima_core::flows::*;
use ima_core::metrics::*;
use ima_core::mixing::*;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..n {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_force(cost: &Array2<f64>) -> f64 {
    permutations(cost.nrows())
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn hungarian_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..1000 {
        let n = 1 + trial % 6;
        let cost = Array2::from_shape_simple_fn((n, n), || rng.sample::<f64, _>(StandardNormal));
        let (assignment, total) = hungarian(cost.view()).unwrap();
        let mut seen = assignment.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..n).collect::<Vec<_>>());
        assert!((total - brute_force(&cost)).abs() < 1e-12, "trial {trial}");
    }
}

proptest! {
    #[test]
    fn hungarian_handles_integer_ties(n in 1usize..=6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cost = Array2::from_shape_simple_fn((n, n), || rng.random_range(0..3) as f64);
        let (_, total) = hungarian(cost.view()).unwrap();
        prop_assert_eq!(total, brute_force(&cost));
    }
}

fn gaussian(m: usize, n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((m, n), || rng.sample(StandardNormal))
}

#[test]
fn spearman_is_bounded_and_transposes() {
    let a = gaussian(200, 4, 1);
    let mut b = gaussian(200, 4, 2);
    b.column_mut(0).assign(&a.column(2).mapv(|v| v.exp()));
    let ab = spearman_matrix(a.view(), b.view()).unwrap();
    let ba = spearman_matrix(b.view(), a.view()).unwrap();
    assert!(ab.iter().all(|v| (-1.0..=1.0).contains(v)));
    assert!((&ab - &ba.t()).iter().all(|v| v.abs() < 1e-14));
    assert!((ab[[2, 0]] - 1.0).abs() < 1e-12);
    let self_corr = spearman_matrix(a.view(), a.view()).unwrap();
    for i in 0..4 {
        assert!((self_corr[[i, i]] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn mcc_ignores_permutation_sign_and_warp() {
    let s = gaussian(2000, 5, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let mut perm: Vec<usize> = (0..5).collect();
        perm.shuffle(&mut rng);
        let mut r = Array2::zeros(s.dim());
        for (j, &p) in perm.iter().enumerate() {
            let sign = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
            let k: f64 = rng.random_range(0.1..3.0);
            let col: Array1<f64> = s.column(p).mapv(|v| sign * ((v * k).sinh() + v.powi(3)));
            r.column_mut(j).assign(&col);
        }
        let res = mcc(s.view(), r.view()).unwrap();
        assert!((res.mcc - 1.0).abs() < 1e-9);
        for (i, &j) in res.assignment.iter().enumerate() {
            assert_eq!(perm[j], i);
        }
    }
}

#[test]
fn mcc_of_noise_is_small() {
    let s = gaussian(10_000, 5, 5);
    let noise = gaussian(10_000, 5, 6);
    assert!(mcc(s.view(), noise.view()).unwrap().mcc < 0.15);

    let mut partial = s.clone();
    partial.column_mut(3).assign(&noise.column(0));
    let res = mcc(s.view(), partial.view()).unwrap();
    assert!((0.80..=0.83).contains(&res.mcc), "{}", res.mcc);
    let mean = res.matched.iter().sum::<f64>() / 5.0;
    assert!((mean - res.mcc).abs() < 1e-15);
}

fn identity_flow(n: usize) -> FlowModel {
    let cfg = FlowConfig {
        blocks: 1,
        hidden_width: 4,
        init_scale: 0.0,
        ..FlowConfig::default()
    };
    build_flow(n, &cfg, FlowKind::Full, BaseKind::Gaussian, 0).unwrap()
}

fn linear(diag: f64) -> MixingFunction {
    let layer = MixingLayer {
        weight: Matrix::eye(2) * diag,
        bias: Array1::zeros(2),
    };
    MixingFunction::from_layers(vec![layer], DEFAULT_SLOPE, InitKind::Orthogonal, 0).unwrap()
}

use ima_core::diffmath::linalg::Matrix;

#[test]
fn kld_against_own_process_is_zero() {
    let prior = SourcePrior::new(PriorKind::StandardNormal, 2);
    let k = kld_estimate(&linear(1.0), &prior, &identity_flow(2), 10_000, 1).unwrap();
    assert!(k.value.abs() < 3.0 * k.std_error + 1e-12, "{k:?}");
}

#[test]
fn kld_of_scaled_gaussian_matches_closed_form() {
    let prior = SourcePrior::new(PriorKind::StandardNormal, 2);
    let expected = 3.0 - 4f64.ln();
    for seed in 0..5 {
        let k = kld_estimate(&linear(2.0), &prior, &identity_flow(2), 10_000, seed).unwrap();
        assert!((k.value - expected).abs() < 3.0 * k.std_error, "{k:?}");
        assert!(k.value > -3.0 * k.std_error);
    }
    assert!(kld_estimate(&linear(2.0), &prior, &identity_flow(2), 99, 0).is_err());
}

#[test]
fn records_serialize_to_csv() {
    let r = MetricsRecord {
        mixing_seed: 1,
        layers: 4,
        n: 5,
        reg_kind: "cima".into(),
        strength: 0.5,
        run_seed: 2,
        mcc: 0.9,
        kld: 0.1,
        kld_se: 0.01,
        cima: 0.2,
        cima_se: 0.02,
        assignment: vec![0, 1, 2, 3, 4],
        matched: vec![0.9; 5],
    };
    let mut buf = Vec::new();
    MetricsRecord::write_csv(&[r], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], MetricsRecord::CSV_HEADER);
    assert_eq!(lines[1], "1,4,5,cima,0.5,2,0.9,0.1,0.01,0.2,0.02");
}
