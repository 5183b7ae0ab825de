use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::FlowConfig;
use crate::diffmath::linalg::{power_iteration, Matrix};
use crate::diffmath::{Tape, Var};

/// Residual block `x ↦ x + h(x)` with `h` an MLP whose weights are kept
/// below `c^(1/depth)` in operator norm, so `Lip(h) < c < 1`.
///
/// The hidden activation is `leaky_tanh` rescaled by `1/(1+α)` to make it
/// 1-Lipschitz; without the rescaling the weight bound alone would not
/// bound `Lip(h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Array1<f64>>,
    /// Dependency masks (1 = allowed) for triangular blocks.
    pub masks: Option<Vec<Matrix>>,
    pub lipschitz: f64,
    pub slope: f64,
    /// Warm-start vectors for power iteration, one per weight.
    pub power_vectors: Vec<Array1<f64>>,
}

/// Estimated spectral norms of a block's weights before rescaling.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationReport {
    pub estimated_norms: Vec<f64>,
    pub target: f64,
}

impl ResidualBlock {
    /// Freshly initialized block. Hidden layers use `U[−1/√fan_in, 1/√fan_in]`
    /// weights and biases; the output layer is `N(0, init_scale²)` with zero
    /// bias, which keeps the block close to the identity.
    pub fn new(n: usize, cfg: &FlowConfig, triangular: bool, rng: &mut ChaCha8Rng) -> Self {
        let mut dims = vec![n];
        dims.extend(std::iter::repeat_n(cfg.hidden_width, cfg.hidden_layers));
        dims.push(n);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            if l + 2 == dims.len() {
                weights.push(Matrix::from_shape_simple_fn((fan_out, fan_in), || {
                    cfg.init_scale * rng.sample::<f64, _>(StandardNormal)
                }));
                biases.push(Array1::zeros(fan_out));
            } else {
                let a = 1.0 / (fan_in as f64).sqrt();
                let u = Uniform::new_inclusive(-a, a).expect("valid range");
                weights.push(Matrix::from_shape_simple_fn((fan_out, fan_in), || rng.sample(u)));
                biases.push(Array1::from_shape_simple_fn(fan_out, || rng.sample(u)));
            }
        }
        let masks = triangular.then(|| triangular_masks(&dims));
        let power_vectors = weights
            .iter()
            .map(|w| Array1::from_shape_simple_fn(w.ncols(), || rng.sample(StandardNormal)))
            .collect();
        let mut block = Self {
            weights,
            biases,
            masks,
            lipschitz: cfg.lipschitz,
            slope: cfg.activation_slope,
            power_vectors,
        };
        block.apply_masks();
        block
    }

    pub fn dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    /// Per-weight operator-norm bound `c^(1/depth)`.
    pub fn norm_target(&self) -> f64 {
        self.lipschitz.powf(1.0 / self.depth() as f64)
    }

    pub fn activation_scale(&self) -> f64 {
        1.0 / (1.0 + self.slope)
    }

    fn act(&self, v: f64) -> f64 {
        self.activation_scale() * (v.tanh() + self.slope * v)
    }

    pub fn apply_masks(&mut self) {
        if let Some(masks) = &self.masks {
            for (w, m) in self.weights.iter_mut().zip(masks) {
                *w *= m;
            }
        }
    }

    /// Masks (if any), then rescales every weight whose power-iteration
    /// norm estimate exceeds [`norm_target`](Self::norm_target).
    pub fn spectral_normalize(&mut self, power_iters: usize) -> NormalizationReport {
        self.apply_masks();
        let target = self.norm_target();
        let mut estimated_norms = Vec::with_capacity(self.depth());
        for (w, v) in self.weights.iter_mut().zip(self.power_vectors.iter_mut()) {
            let sigma = power_iteration(w.view(), v, power_iters);
            estimated_norms.push(sigma);
            if sigma > target {
                *w *= target / sigma;
            }
        }
        NormalizationReport {
            estimated_norms,
            target,
        }
    }

    /// `h(x)` evaluated directly.
    pub fn residual(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let mut h = x.to_owned();
        let last = self.depth() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = w.dot(&h) + b;
            if l < last {
                h.mapv_inplace(|v| self.act(v));
            }
        }
        h
    }

    /// Max of `‖h(u) − h(v)‖ / ‖u − v‖` over random pairs, half of them at
    /// unit scale and half very close together.
    pub fn empirical_lipschitz(&self, pairs: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for k in 0..pairs {
            let u: Array1<f64> = Array1::from_shape_simple_fn(n, || 3.0 * rng.sample::<f64, _>(StandardNormal));
            let scale = if k % 2 == 0 { 1.0 } else { 1e-4 };
            let d: Array1<f64> = Array1::from_shape_simple_fn(n, || scale * rng.sample::<f64, _>(StandardNormal));
            let v = &u + &d;
            let num = self.residual(u.view()) - self.residual(v.view());
            let ratio = num.dot(&num).sqrt() / d.dot(&d).sqrt();
            worst = worst.max(ratio);
        }
        worst
    }

    /// `(h(x), ∂h/∂x)` evaluated directly.
    pub fn residual_with_jacobian(&self, x: ArrayView1<f64>) -> (Array1<f64>, Matrix) {
        let mut h = x.to_owned();
        let mut jac = Matrix::eye(x.len());
        let last = self.depth() - 1;
        let scale = self.activation_scale();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = w.dot(&h) + b;
            jac = w.dot(&jac);
            if l < last {
                for (mut r, z) in jac.rows_mut().into_iter().zip(h.iter()) {
                    let c = z.cosh();
                    r *= scale * (1.0 / (c * c) + self.slope);
                }
                h.mapv_inplace(|v| self.act(v));
            }
        }
        (h, jac)
    }

    /// Places this block's parameters on `tape`, tracked when `trainable`.
    pub(crate) fn tape_params<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<(Var<'t>, Var<'t>)> {
        let leaf = |a: Array2<f64>| if trainable { tape.param(a) } else { tape.constant(a) };
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| (leaf(w.clone()), leaf(b.clone().insert_axis(ndarray::Axis(0)))))
            .collect()
    }

    /// Pushes a batch `x` (b×n) and stacked transposed Jacobians `jt`
    /// ((b·n)×n) through the block.
    pub(crate) fn forward_tape<'t>(
        &self,
        params: &[(Var<'t>, Var<'t>)],
        x: Var<'t>,
        jt: Var<'t>,
    ) -> (Var<'t>, Var<'t>) {
        let tape = x.tape();
        let n = self.dim();
        let scale = self.activation_scale();
        let last = params.len() - 1;
        let mut h = x;
        let mut p = jt;
        for (l, &(w, b)) in params.iter().enumerate() {
            let w = match &self.masks {
                Some(m) => w * tape.constant(m[l].clone()),
                None => w,
            };
            let z = h.matmul_t(w).add_row(b);
            p = p.matmul_t(w);
            if l < last {
                let d = z.leaky_tanh_deriv(self.slope, scale);
                p = p * d.repeat_rows(n);
                h = z.leaky_tanh(self.slope, scale);
            } else {
                h = z;
            }
        }
        (x + h, jt + p)
    }
}

/// MADE-style masks giving `∂hᵢ/∂xⱼ = 0` for `j > i` (the diagonal stays
/// free, so blocks can change volume).
fn triangular_masks(dims: &[usize]) -> Vec<Matrix> {
    let n = dims[0];
    // degree of each unit: inputs/outputs are 1..=n, hidden cycle through 1..=n
    let degrees: Vec<Vec<usize>> = dims
        .iter()
        .enumerate()
        .map(|(l, &d)| {
            if l == 0 || l + 1 == dims.len() {
                (1..=n).collect()
            } else {
                (0..d).map(|k| k % n + 1).collect()
            }
        })
        .collect();
    (0..dims.len() - 1)
        .map(|l| {
            Array2::from_shape_fn((dims[l + 1], dims[l]), |(o, i)| {
                if degrees[l + 1][o] >= degrees[l][i] {
                    1.0
                } else {
                    0.0
                }
            })
        })
        .collect()
}
