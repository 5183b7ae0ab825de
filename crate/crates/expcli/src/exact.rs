//! Fast deterministic acceptance checks (criteria 1 to 9).

use ima_core::contrast::{cima_local, decompose_2d};
use ima_core::diffmath::linalg::{logabsdet, random_orthogonal, Matrix};
use ima_core::flows::{build_flow, BaseKind, FlowConfig, FlowKind, FlowModel};
use ima_core::metrics::{hungarian, kld_estimate, mcc};
use ima_core::mixing::{
    sample_dataset, sample_mixing, DarmoisOracle, InitKind, MixingFunction, MixingLayer, PriorKind, SourcePrior,
    DEFAULT_DARMOIS_NODES, DEFAULT_SLOPE,
};
use ima_core::training::{
    gradient_check, train, GenerativeProcess, GradientTerm, RegularizerKind, RegularizerSpec, TrainConfig,
};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::checks::Outcome;

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Nonzero diagonal entries `±exp(U[−2, 2])`.
fn random_diagonal(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let mut d = Matrix::zeros((n, n));
    for i in 0..n {
        let sign = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
        d[[i, i]] = sign * rng.random_range(-2.0f64..2.0).exp();
    }
    d
}

fn permutation_matrix(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    let mut m = Matrix::zeros((n, n));
    for (i, &j) in p.iter().enumerate() {
        m[[i, j]] = 1.0;
    }
    m
}

pub fn contrast_nonnegativity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut min_general = f64::INFINITY;
    let mut errors = 0;
    for k in 0..100_000 {
        let n = 2 + k % 4;
        match cima_local(gaussian_matrix(&mut rng, n, n).view()) {
            Ok(c) => min_general = min_general.min(c),
            Err(_) => errors += 1,
        }
    }
    let mut max_od: f64 = 0.0;
    for k in 0..1000 {
        let n = 2 + k % 4;
        let j = random_orthogonal(n, &mut rng).dot(&random_diagonal(&mut rng, n));
        max_od = max_od.max(cima_local(j.view()).unwrap_or(f64::INFINITY));
    }
    Outcome::new(
        1,
        "contrast nonnegativity and zero set",
        min_general >= -1e-12 && errors == 0 && max_od < 1e-12,
        format!("min over 1e5 random J {min_general:.3e} ({errors} errors); max over 1e3 O·D {max_od:.3e}"),
    )
}

pub fn contrast_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let n = 2 + k % 4;
        let j = gaussian_matrix(&mut rng, n, n);
        let jdp = j.dot(&random_diagonal(&mut rng, n)).dot(&permutation_matrix(&mut rng, n));
        let gap = match (cima_local(j.view()), cima_local(jdp.view())) {
            (Ok(a), Ok(b)) => (a - b).abs(),
            _ => f64::INFINITY,
        };
        worst = worst.max(gap);
    }
    Outcome::new(
        2,
        "contrast invariance under J·D·P",
        worst < 1e-10,
        format!("max |c(J) − c(JDP)| over 1e3 triples {worst:.3e}"),
    )
}

pub fn two_dimensional_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut sin_gap, mut det_gap, mut eq_gap): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for k in 0..10_000 {
        let j = gaussian_matrix(&mut rng, 2, 2);
        let (a, b) = (j.column(0), j.column(1));
        let theta = (a[0] * b[1] - a[1] * b[0]).abs().atan2(a.dot(&b));
        let c = cima_local(j.view()).unwrap_or(f64::INFINITY);
        sin_gap = sin_gap.max((c + theta.sin().ln()).abs());
        let lad = logabsdet(j.view()).unwrap_or(f64::INFINITY);
        let norms = a.dot(&a).sqrt().ln() + b.dot(&b).sqrt().ln();
        det_gap = det_gap.max((lad - (norms + theta.sin().ln())).abs());
        let lambda = [0.0, 0.5, 1.0][k % 3];
        let base: f64 = rng.random_range(-5.0..0.0);
        eq_gap = eq_gap.max(match decompose_2d(j.view(), base, lambda) {
            Ok(d) => (d.regularized_likelihood() - (base - lad - lambda * c)).abs(),
            Err(_) => f64::INFINITY,
        });
    }
    Outcome::new(
        3,
        "2D identities",
        sin_gap < 1e-9 && det_gap < 1e-9 && eq_gap < 1e-9,
        format!("max gaps over 1e4 J: −log|sin θ| {sin_gap:.2e}, log|det| {det_gap:.2e}, reassembly {eq_gap:.2e}"),
    )
}

fn two_block_flow(n: usize, seed: u64) -> FlowModel {
    let cfg = FlowConfig {
        blocks: 2,
        hidden_width: 8,
        init_scale: 0.5,
        ..FlowConfig::default()
    };
    let mut m = build_flow(n, &cfg, FlowKind::Full, BaseKind::Logistic, seed).expect("valid flow config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    m.output.log_scale.mapv_inplace(|_| 0.3 * rng.sample::<f64, _>(StandardNormal));
    m.output.shift.mapv_inplace(|_| 0.3 * rng.sample::<f64, _>(StandardNormal));
    m
}

pub fn gradient_correctness() -> Outcome {
    let regs = [
        RegularizerSpec::none(),
        RegularizerSpec::cima(1.0).expect("valid"),
        RegularizerSpec::new(RegularizerKind::L1, 1e-2).expect("valid"),
        RegularizerSpec::new(RegularizerKind::L2, 1e-2).expect("valid"),
    ];
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for n in [2, 5] {
        let model = two_block_flow(n, n as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(10 + n as u64);
        let batch = gaussian_matrix(&mut rng, 8, n);
        let mut terms = vec![GradientTerm::LogLikelihood, GradientTerm::Cima];
        terms.extend(regs.iter().map(|r| GradientTerm::Objective(*r)));
        for term in terms {
            match gradient_check(&model, batch.view(), term, 1e-5, 1e-4) {
                Ok(r) => {
                    worst = worst.max(r.max_rel_error);
                    if !r.passed {
                        failures.push(format!("n={n} {term:?}"));
                    }
                }
                Err(e) => failures.push(format!("n={n} {term:?}: {e}")),
            }
        }
    }
    Outcome::new(
        4,
        "gradient correctness",
        failures.is_empty(),
        format!("12 checks, max relative error {worst:.2e}; failures: [{}]", failures.join(", ")),
    )
}

fn round_trip_error(model: &FlowModel, x: &Array2<f64>) -> f64 {
    let y = model.transform(x.view());
    y.rows()
        .into_iter()
        .zip(x.rows())
        .map(|(yr, xr)| match model.inverse(yr, 1e-10, 10_000) {
            Ok(inv) => (&inv.x - &xr).iter().fold(0.0f64, |m, v| m.max(v.abs())),
            Err(_) => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

pub fn flow_invertibility() -> Outcome {
    let n = 5;
    let cfg = FlowConfig {
        blocks: 4,
        hidden_width: 16,
        init_scale: 1.0,
        ..FlowConfig::default()
    };
    let mixing = sample_mixing(n, 4, InitKind::Orthogonal, 3).expect("valid mixing");
    let prior = SourcePrior::new(PriorKind::StandardNormal, n);
    let x = sample_dataset(&mixing, &prior, 1000, 4).expect("valid dataset").observations;
    let fresh = build_flow(n, &cfg, FlowKind::Full, BaseKind::Logistic, 5).expect("valid flow");
    let tc = TrainConfig {
        iterations: 500,
        batch_size: 64,
        eval_every: 500,
        eval_batch: 256,
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let trained = train(
        &fresh,
        GenerativeProcess {
            mixing: &mixing,
            prior: &prior,
        },
        &tc,
        &RegularizerSpec::cima(0.5).expect("valid"),
    )
    .map(|t| t.model)
    .unwrap_or_else(|f| *f.last_valid);
    let e_fresh = round_trip_error(&fresh, &x);
    let e_trained = round_trip_error(&trained, &x);
    let tri = build_flow(n, &cfg, FlowKind::Triangular, BaseKind::Gaussian, 6).expect("valid flow");
    let mut upper: f64 = 0.0;
    for row in x.rows() {
        if let Ok((_, j, _)) = tri.forward(row) {
            for i in 0..n {
                for k in i + 1..n {
                    upper = upper.max(j[[i, k]].abs());
                }
            }
        } else {
            upper = f64::INFINITY;
        }
    }
    Outcome::new(
        5,
        "flow invertibility",
        e_fresh < 1e-7 && e_trained < 1e-7 && upper < 1e-12,
        format!("max round-trip error over 1e3 points: fresh {e_fresh:.2e}, trained {e_trained:.2e}; max upper Jacobian entry of triangular flow {upper:.2e}"),
    )
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

pub fn matching_and_mcc() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let perms: Vec<Vec<Vec<usize>>> = (0..=6).map(permutations).collect();
    let mut mismatches = 0;
    for trial in 0..1000 {
        let n = 1 + trial % 6;
        let cost = gaussian_matrix(&mut rng, n, n);
        let brute = perms[n]
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        match hungarian(cost.view()) {
            Ok((_, total)) if (total - brute).abs() < 1e-12 => {}
            _ => mismatches += 1,
        }
    }
    let s = gaussian_matrix(&mut rng, 2000, 5);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let p = permutation_matrix(&mut rng, 5);
        let signs: Vec<f64> = (0..5).map(|_| if rng.random_bool(0.5) { -1.0 } else { 1.0 }).collect();
        let mut warped = s.dot(&p);
        for (j, mut col) in warped.columns_mut().into_iter().enumerate() {
            let k: f64 = rng.random_range(0.1..3.0);
            col.mapv_inplace(|v| signs[j] * ((k * v).sinh() + v.powi(3)));
        }
        worst = worst.max(match mcc(s.view(), warped.view()) {
            Ok(r) => (r.mcc - 1.0).abs(),
            Err(_) => f64::INFINITY,
        });
    }
    Outcome::new(
        6,
        "matching and MCC invariance",
        mismatches == 0 && worst < 1e-9,
        format!("hungarian vs brute force: {mismatches}/1000 mismatches; max |mcc − 1| under permutation, sign and warp {worst:.2e}"),
    )
}

fn identity_flow() -> FlowModel {
    let cfg = FlowConfig {
        blocks: 1,
        hidden_width: 4,
        init_scale: 0.0,
        ..FlowConfig::default()
    };
    build_flow(2, &cfg, FlowKind::Full, BaseKind::Gaussian, 0).expect("valid flow")
}

fn linear_mixing(scale: f64) -> MixingFunction {
    let layer = MixingLayer {
        weight: Matrix::eye(2) * scale,
        bias: Array1::zeros(2),
    };
    MixingFunction::from_layers(vec![layer], DEFAULT_SLOPE, InitKind::Orthogonal, 0).expect("invertible layer")
}

pub fn kld_sanity() -> Outcome {
    let prior = SourcePrior::new(PriorKind::StandardNormal, 2);
    let model = identity_flow();
    let own = kld_estimate(&linear_mixing(1.0), &prior, &model, 10_000, 1);
    let scaled = kld_estimate(&linear_mixing(2.0), &prior, &model, 10_000, 2);
    let expected = 3.0 - 4f64.ln();
    match (own, scaled) {
        (Ok(a), Ok(b)) => Outcome::new(
            7,
            "KLD sanity",
            a.value.abs() <= 3.0 * a.std_error && (b.value - expected).abs() < 3.0 * b.std_error,
            format!(
                "self {:.2e} ± {:.2e}; diag(2) {:.4} ± {:.4} vs {expected:.4}",
                a.value, a.std_error, b.value, b.std_error
            ),
        ),
        (a, b) => Outcome::new(7, "KLD sanity", false, format!("estimation failed: {:?} {:?}", a.err(), b.err())),
    }
}

pub fn density_normalization() -> Outcome {
    let mut model = two_block_flow(2, 11);
    model.output.log_scale = ndarray::array![0.2, -0.1];
    let (lo, hi, k) = (-14.0, 14.0, 561);
    let h = (hi - lo) / (k - 1) as f64;
    let mut pts = Array2::zeros((k * k, 2));
    for i in 0..k {
        for j in 0..k {
            pts[[i * k + j, 0]] = lo + h * i as f64;
            pts[[i * k + j, 1]] = lo + h * j as f64;
        }
    }
    let model_mass = model
        .log_likelihood_batch(pts.view())
        .map(|ll| ll.iter().map(|v| v.exp()).sum::<f64>() * h * h)
        .unwrap_or(f64::NAN);
    let prior = SourcePrior::new(PriorKind::StandardNormal, 2);
    let true_mass = sample_mixing(2, 3, InitKind::Orthogonal, 12)
        .and_then(|m| DarmoisOracle::new(&m, &prior, DEFAULT_DARMOIS_NODES))
        .map(|o| o.mass())
        .unwrap_or(f64::NAN);
    Outcome::new(
        8,
        "density normalization",
        (model_mass - 1.0).abs() < 1e-2 && (true_mass - 1.0).abs() < 1e-2,
        format!("quadrature mass: model {model_mass:.5}, true mixing {true_mass:.5}"),
    )
}

/// Largest gap between the empirical CDF of `v` and the uniform CDF.
pub fn ks_uniform(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &u)| ((i as f64 + 1.0) / k - u).max(u - i as f64 / k))
        .fold(0.0, f64::max)
}

pub fn darmois_oracle() -> Outcome {
    let prior = SourcePrior::new(PriorKind::StandardNormal, 2);
    let result = sample_mixing(2, 3, InitKind::Orthogonal, 2).and_then(|m| {
        let oracle = DarmoisOracle::new(&m, &prior, DEFAULT_DARMOIS_NODES)?;
        let data = sample_dataset(&m, &prior, 10_000, 77)?;
        let mut cols = [Vec::new(), Vec::new()];
        for x in data.observations.rows() {
            let u = oracle.transform([x[0], x[1]])?;
            cols[0].push(u[0]);
            cols[1].push(u[1]);
        }
        Ok(cols.map(ks_uniform))
    });
    match result {
        Ok([a, b]) => Outcome::new(
            9,
            "Darmois oracle uniformity",
            a < 0.03 && b < 0.03,
            format!("KS statistics over 1e4 samples: {a:.4}, {b:.4}"),
        ),
        Err(e) => Outcome::new(9, "Darmois oracle uniformity", false, format!("oracle failed: {e}")),
    }
}

