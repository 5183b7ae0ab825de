use ima_core::diffmath::{logabsdet, Matrix};
use ima_core::flows::*;
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn config(blocks: usize, width: usize, init_scale: f64) -> FlowConfig {
    FlowConfig {
        blocks,
        hidden_width: width,
        init_scale,
        ..FlowConfig::default()
    }
}

fn gaussian_points(count: usize, n: usize, scale: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((count, n), || scale * rng.sample::<f64, _>(StandardNormal))
}

#[test]
fn fresh_model_is_near_identity() {
    let m = build_flow(5, &FlowConfig::default(), FlowKind::Full, BaseKind::Logistic, 1).unwrap();
    let x = gaussian_points(1000, 5, 1.0, 2);
    let y = m.transform(x.view());
    for (a, b) in x.rows().into_iter().zip(y.rows()) {
        let norm = a.dot(&a).sqrt();
        let a = if norm > 3.0 { &a * (3.0 / norm) } else { a.to_owned() };
        let ya = m.forward(a.view()).unwrap().0;
        assert!((&ya - &a).dot(&(&ya - &a)).sqrt() < 0.5);
        assert!(b.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn same_seed_same_parameters() {
    let cfg = config(3, 8, 0.1);
    let a = build_flow(3, &cfg, FlowKind::Triangular, BaseKind::Gaussian, 9).unwrap();
    let b = build_flow(3, &cfg, FlowKind::Triangular, BaseKind::Gaussian, 9).unwrap();
    assert_eq!(a, b);
}

#[test]
fn jacobian_matches_finite_differences() {
    for kind in [FlowKind::Full, FlowKind::Triangular] {
        let mut m = build_flow(4, &config(3, 12, 0.5), kind, BaseKind::Gaussian, 3).unwrap();
        m.output.log_scale = array![0.3, -0.2, 0.1, 0.0];
        let x = gaussian_points(20, 4, 1.5, 4);
        for row in x.rows() {
            let (_, j, log_det) = m.forward(row).unwrap();
            let h = 1e-6;
            let mut fd = Matrix::zeros((4, 4));
            for c in 0..4 {
                let mut p = row.to_owned();
                let mut q = row.to_owned();
                p[c] += h;
                q[c] -= h;
                let d = (m.forward(p.view()).unwrap().0 - m.forward(q.view()).unwrap().0) / (2.0 * h);
                fd.column_mut(c).assign(&d);
            }
            let scale = j.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let rel = (&j - &fd).iter().fold(0.0f64, |a, v| a.max(v.abs())) / scale;
            assert!(rel < 1e-5, "{kind:?}: {rel:e}");
            assert!((log_det - logabsdet(j.view()).unwrap()).abs() < 1e-12);
            if kind == FlowKind::Triangular {
                for r in 0..4 {
                    for c in r + 1..4 {
                        assert!(j[[r, c]].abs() < 1e-12);
                    }
                }
                let diag: f64 = j.diag().iter().map(|d| d.abs().ln()).sum();
                assert!((diag - log_det).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn normalized_blocks_are_contractive() {
    let m = build_flow(3, &config(4, 16, 3.0), FlowKind::Full, BaseKind::Gaussian, 5).unwrap();
    let mut m = m;
    m.spectral_normalize(200);
    assert!(m.empirical_lipschitz(1000, 6) < 1.0);
}

#[test]
fn inverse_round_trip_and_iteration_bound() {
    let mut m = build_flow(3, &config(4, 16, 2.0), FlowKind::Full, BaseKind::Gaussian, 7).unwrap();
    m.spectral_normalize(200);
    let bound = (1e-10f64.ln() / 0.9f64.ln()).ceil() as usize + 50;
    let ys = gaussian_points(200, 3, 2.0, 8);
    for y in ys.rows() {
        let inv = m.inverse(y, 1e-10, 10_000).unwrap();
        let back = m.forward(inv.x.view()).unwrap().0;
        assert!((&back - &y).iter().all(|v| v.abs() < 1e-8));
        assert!(inv.max_block_iterations <= bound, "{}", inv.max_block_iterations);
    }
    assert!(m.inverse(ys.row(0), 1e-10, 1).is_err());
}

#[test]
fn likelihood_integrates_to_one() {
    for base in [BaseKind::Gaussian, BaseKind::Logistic] {
        let mut m = build_flow(2, &config(2, 8, 0.5), FlowKind::Full, base, 11).unwrap();
        m.output.log_scale = array![0.2, -0.1];
        let (lo, hi, k) = (-14.0, 14.0, 561);
        let h = (hi - lo) / (k - 1) as f64;
        let grid: Vec<f64> = (0..k).map(|i| lo + h * i as f64).collect();
        let mut pts = Array2::zeros((k * k, 2));
        for (i, &a) in grid.iter().enumerate() {
            for (j, &b) in grid.iter().enumerate() {
                pts[[i * k + j, 0]] = a;
                pts[[i * k + j, 1]] = b;
            }
        }
        let ll = m.log_likelihood_batch(pts.view()).unwrap();
        let mass: f64 = ll.iter().map(|v| v.exp()).sum::<f64>() * h * h;
        assert!((mass - 1.0).abs() < 1e-2, "{base:?}: {mass}");
    }
}

#[test]
fn scalar_times_orthogonal_has_zero_contrast() {
    let mut m = build_flow(3, &config(1, 4, 0.0), FlowKind::Full, BaseKind::Gaussian, 0).unwrap();
    m.output.log_scale = Array1::from_elem(3, 0.7);
    let x = gaussian_points(10, 3, 1.0, 1);
    assert!(m.cima_batch(x.view()).unwrap().iter().all(|c| c.abs() < 1e-10));
    m.output.log_scale = array![0.7, -0.3, 1.2];
    assert!(m.cima_batch(x.view()).unwrap().iter().all(|c| c.abs() < 1e-10));
}
