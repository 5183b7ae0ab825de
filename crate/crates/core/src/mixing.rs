//! Ground-truth mixings: random invertible MLPs with `leaky_tanh`
//! activations, their exact push-forward densities, sampled datasets, and a
//! quadrature-based Darmois construction for the 2D case.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::diffmath::linalg::{random_orthogonal, Lu, Matrix};
use crate::error::{Error, Result};

pub const DEFAULT_SLOPE: f64 = 0.1;
pub const MIN_WEIGHT_DET: f64 = 1e-8;
const MAX_RESAMPLES: usize = 100;
const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITERS: usize = 100;

/// `tanh(x) + α·x`
pub fn leaky_tanh(x: f64, alpha: f64) -> f64 {
    x.tanh() + alpha * x
}

pub fn leaky_tanh_derivative(x: f64, alpha: f64) -> f64 {
    let t = x.tanh();
    1.0 - t * t + alpha
}

/// Inverse of [`leaky_tanh`] by Newton's method, safeguarded with bisection
/// on the bracket implied by `|leaky_tanh(x) − αx| ≤ 1`.
pub fn leaky_tanh_inverse(y: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("leaky_tanh slope must be positive"));
    }
    if !y.is_finite() {
        return Err(Error::NonFinite {
            what: "leaky_tanh_inverse input".into(),
            index: 0,
        });
    }
    let mut lo = (y - 1.0) / alpha;
    let mut hi = (y + 1.0) / alpha;
    let mut x = y / (1.0 + alpha);
    for _ in 0..NEWTON_MAX_ITERS {
        let f = leaky_tanh(x, alpha) - y;
        if f == 0.0 {
            return Ok(x);
        }
        if f > 0.0 {
            hi = hi.min(x);
        } else {
            lo = lo.max(x);
        }
        let mut next = x - f / leaky_tanh_derivative(x, alpha);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= NEWTON_TOL * (1.0 + x.abs()) {
            return Ok(next);
        }
        x = next;
    }
    Err(Error::NoConvergence {
        what: "leaky_tanh inverse",
        iterations: NEWTON_MAX_ITERS,
        residual: (leaky_tanh(x, alpha) - y).abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Haar-orthogonal weights, Gaussian biases.
    Orthogonal,
    /// Weights `U[−1/√n, 1/√n]`, zero biases.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    StandardNormal,
    Uniform01,
}

/// Factorized source distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourcePrior {
    pub kind: PriorKind,
    pub n: usize,
}

impl SourcePrior {
    pub fn new(kind: PriorKind, n: usize) -> Self {
        Self { kind, n }
    }

    pub fn log_density(&self, s: ArrayView1<f64>) -> f64 {
        match self.kind {
            PriorKind::StandardNormal => {
                -0.5 * s.dot(&s) - 0.5 * s.len() as f64 * (2.0 * std::f64::consts::PI).ln()
            }
            PriorKind::Uniform01 => {
                if s.iter().all(|v| (0.0..=1.0).contains(v)) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Array2<f64> {
        match self.kind {
            PriorKind::StandardNormal => {
                Array2::from_shape_simple_fn((count, self.n), || rng.sample(StandardNormal))
            }
            PriorKind::Uniform01 => {
                let u = Uniform::new(0.0, 1.0).expect("valid range");
                Array2::from_shape_simple_fn((count, self.n), || rng.sample(u))
            }
        }
    }

    /// Per-coordinate support used for quadrature: ±6σ or the unit interval.
    pub fn quadrature_range(&self) -> (f64, f64) {
        match self.kind {
            PriorKind::StandardNormal => (-6.0, 6.0),
            PriorKind::Uniform01 => (0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingLayer {
    pub weight: Matrix,
    pub bias: Array1<f64>,
}

/// Knobs the source material leaves open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixingOptions {
    pub alpha: f64,
    /// Standard deviation of the Gaussian biases (orthogonal init only).
    pub bias_scale: f64,
}

impl Default for MixingOptions {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_SLOPE,
            bias_scale: 1.0,
        }
    }
}

/// Invertible MLP `f`: affine layers with `leaky_tanh` in between and no
/// activation after the last layer.
#[derive(Debug, Clone)]
pub struct MixingFunction {
    n: usize,
    alpha: f64,
    init_kind: InitKind,
    seed: u64,
    layers: Vec<MixingLayer>,
    factors: Vec<Lu>,
}

impl PartialEq for MixingFunction {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.alpha == other.alpha
            && self.init_kind == other.init_kind
            && self.seed == other.seed
            && self.layers == other.layers
    }
}

pub fn sample_mixing(n: usize, layers: usize, init_kind: InitKind, seed: u64) -> Result<MixingFunction> {
    sample_mixing_with(n, layers, init_kind, seed, &MixingOptions::default())
}

/// Draws a mixing. Layers are drawn in order from one seeded stream, so the
/// first `k` layers of an `L`-layer mixing coincide with those of any deeper
/// mixing drawn from the same seed.
pub fn sample_mixing_with(
    n: usize,
    layers: usize,
    init_kind: InitKind,
    seed: u64,
    opts: &MixingOptions,
) -> Result<MixingFunction> {
    if n < 2 {
        return Err(Error::invalid("mixing dimension must be at least 2"));
    }
    if layers < 1 {
        return Err(Error::invalid("mixing needs at least one layer"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(layers);
    for _ in 0..layers {
        let layer = match init_kind {
            InitKind::Orthogonal => {
                let weight = random_orthogonal(n, &mut rng);
                let bias = Array1::from_shape_simple_fn(n, || {
                    opts.bias_scale * rng.sample::<f64, _>(StandardNormal)
                });
                MixingLayer { weight, bias }
            }
            InitKind::Uniform => {
                let a = 1.0 / (n as f64).sqrt();
                let u = Uniform::new_inclusive(-a, a).expect("valid range");
                let mut attempt = 0;
                let weight = loop {
                    let w = Matrix::from_shape_simple_fn((n, n), || rng.sample(u));
                    if Lu::new(w.view())?.det().abs() > MIN_WEIGHT_DET {
                        break w;
                    }
                    attempt += 1;
                    if attempt > MAX_RESAMPLES {
                        return Err(Error::invalid(format!(
                            "no invertible uniform weight after {MAX_RESAMPLES} resamples"
                        )));
                    }
                };
                MixingLayer {
                    weight,
                    bias: Array1::zeros(n),
                }
            }
        };
        out.push(layer);
    }
    MixingFunction::from_layers(out, opts.alpha, init_kind, seed)
}

impl MixingFunction {
    /// Validates and assembles a mixing from explicit layers.
    pub fn from_layers(layers: Vec<MixingLayer>, alpha: f64, init_kind: InitKind, seed: u64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::invalid("activation slope must be positive"));
        }
        let n = layers
            .first()
            .ok_or_else(|| Error::invalid("mixing needs at least one layer"))?
            .weight
            .nrows();
        if n < 2 {
            return Err(Error::invalid("mixing dimension must be at least 2"));
        }
        let mut factors = Vec::with_capacity(layers.len());
        for (k, l) in layers.iter().enumerate() {
            if l.weight.dim() != (n, n) || l.bias.len() != n {
                return Err(Error::invalid(format!("layer {k} has inconsistent shape")));
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("mixing layer {k}"),
                    index: k,
                });
            }
            let lu = Lu::new(l.weight.view())?;
            if lu.det().abs() <= MIN_WEIGHT_DET {
                return Err(Error::invalid(format!(
                    "layer {k} weight is not invertible (|det| = {:e})",
                    lu.det().abs()
                )));
            }
            factors.push(lu);
        }
        Ok(Self {
            n,
            alpha,
            init_kind,
            seed,
            layers,
            factors,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn depth(&self) -> usize {
        self.layers.len()
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn init_kind(&self) -> InitKind {
        self.init_kind
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn layers(&self) -> &[MixingLayer] {
        &self.layers
    }

    fn is_last(&self, k: usize) -> bool {
        k + 1 == self.layers.len()
    }

    pub fn forward(&self, s: ArrayView1<f64>) -> Array1<f64> {
        let mut h = s.to_owned();
        for (k, l) in self.layers.iter().enumerate() {
            h = l.weight.dot(&h) + &l.bias;
            if !self.is_last(k) {
                h.mapv_inplace(|v| leaky_tanh(v, self.alpha));
            }
        }
        h
    }

    /// Row-wise [`forward`](Self::forward) over a batch, bit-identical to
    /// the single-point path.
    pub fn forward_batch(&self, s: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(s.dim());
        for (src, mut dst) in s.rows().into_iter().zip(out.rows_mut()) {
            dst.assign(&self.forward(src));
        }
        out
    }

    pub fn inverse(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        Ok(self.inverse_with_log_det(x)?.0)
    }

    /// `(f⁻¹(x), log|det J_f(f⁻¹(x))|)`, the determinant accumulated layer
    /// by layer during inversion.
    pub fn inverse_with_log_det(&self, x: ArrayView1<f64>) -> Result<(Array1<f64>, f64)> {
        let mut h = x.to_owned();
        let mut log_det = 0.0;
        for k in (0..self.layers.len()).rev() {
            if !self.is_last(k) {
                for v in h.iter_mut() {
                    *v = leaky_tanh_inverse(*v, self.alpha)?;
                    log_det += leaky_tanh_derivative(*v, self.alpha).ln();
                }
            }
            h -= &self.layers[k].bias;
            h = self.factors[k].solve(h.view());
            log_det += self.factors[k].log_abs_det().0;
        }
        Ok((h, log_det))
    }

    /// Analytic Jacobian `∂f/∂s` at `s`.
    pub fn jacobian(&self, s: ArrayView1<f64>) -> Matrix {
        let mut h = s.to_owned();
        let mut jac = Matrix::eye(self.n);
        for (k, l) in self.layers.iter().enumerate() {
            let z = l.weight.dot(&h) + &l.bias;
            jac = l.weight.dot(&jac);
            if self.is_last(k) {
                h = z;
            } else {
                for (i, mut row) in jac.rows_mut().into_iter().enumerate() {
                    let d = leaky_tanh_derivative(z[i], self.alpha);
                    row.mapv_inplace(|v| v * d);
                }
                h = z.mapv(|v| leaky_tanh(v, self.alpha));
            }
        }
        jac
    }

    /// `log p_x(x) = log p_s(f⁻¹(x)) − log|det J_f(f⁻¹(x))|`.
    pub fn true_log_density(&self, prior: &SourcePrior, x: ArrayView1<f64>) -> Result<f64> {
        let (s, log_det) = self.inverse_with_log_det(x)?;
        let lp = prior.log_density(s.view());
        if lp == f64::NEG_INFINITY {
            return Ok(lp);
        }
        Ok(lp - log_det)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MixingDoc::from(self))?)
    }

    /// Parses and re-validates a serialized mixing.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MixingDoc = serde_json::from_str(text)?;
        doc.try_into()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    /// Row-major `n×n`.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixingDoc {
    n: usize,
    #[serde(rename = "L")]
    depth: usize,
    alpha: f64,
    init_kind: InitKind,
    seed: u64,
    layers: Vec<LayerDoc>,
}

impl From<&MixingFunction> for MixingDoc {
    fn from(m: &MixingFunction) -> Self {
        MixingDoc {
            n: m.n,
            depth: m.layers.len(),
            alpha: m.alpha,
            init_kind: m.init_kind,
            seed: m.seed,
            layers: m
                .layers
                .iter()
                .map(|l| LayerDoc {
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<MixingDoc> for MixingFunction {
    type Error = Error;

    fn try_from(doc: MixingDoc) -> Result<Self> {
        if doc.layers.len() != doc.depth {
            return Err(Error::invalid(format!(
                "L = {} but {} layers present",
                doc.depth,
                doc.layers.len()
            )));
        }
        let n = doc.n;
        let layers = doc
            .layers
            .into_iter()
            .enumerate()
            .map(|(k, l)| {
                let weight = Matrix::from_shape_vec((n, n), l.weight)
                    .map_err(|_| Error::invalid(format!("layer {k}: weight must have n² entries")))?;
                if l.bias.len() != n {
                    return Err(Error::invalid(format!("layer {k}: bias must have n entries")));
                }
                Ok(MixingLayer {
                    weight,
                    bias: Array1::from(l.bias),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MixingFunction::from_layers(layers, doc.alpha, doc.init_kind, doc.seed)
    }
}

/// Sources and their mixtures; `observations[k] = f(sources[k])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sources: Array2<f64>,
    pub observations: Array2<f64>,
    pub mixing_seed: u64,
    pub prior: PriorKind,
}

pub fn sample_dataset(m: &MixingFunction, prior: &SourcePrior, count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::invalid("dataset needs at least one sample"));
    }
    if prior.n != m.dim() {
        return Err(Error::invalid("prior and mixing dimensions differ"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sources = prior.sample(count, &mut rng);
    let observations = m.forward_batch(sources.view());
    Ok(Dataset {
        sources,
        observations,
        mixing_seed: m.seed(),
        prior: prior.kind,
    })
}

impl Dataset {
    /// CSV with header `s1..sn,x1..xn`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.sources.ncols();
        let header: Vec<String> = (1..=n)
            .map(|i| format!("s{i}"))
            .chain((1..=n).map(|i| format!("x{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (s, x) in self.sources.rows().into_iter().zip(self.observations.rows()) {
            let cells: Vec<String> = s.iter().chain(x.iter()).map(|v| format!("{v}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Node count per axis for [`DarmoisOracle`].
pub const DEFAULT_DARMOIS_NODES: usize = 2048;
const DARMOIS_MASS_TOL: f64 = 1e-3;

/// Exact-density Darmois construction for a 2D mixing,
/// `x ↦ (F(x₁), F(x₂ | x₁))`, by trapezoidal quadrature of the
/// push-forward density on a uniform grid. Between grid nodes the
/// cumulative integrals are interpolated linearly.
#[derive(Debug, Clone)]
pub struct DarmoisOracle {
    x1: Array1<f64>,
    x2: Array1<f64>,
    /// Cumulative integral along x₂ for every x₁ node (row).
    conditional_cum: Array2<f64>,
    /// Unnormalized cumulative marginal of x₁ at the grid nodes.
    marginal_cdf: Array1<f64>,
    mass: f64,
}

impl DarmoisOracle {
    pub fn new(mixing: &MixingFunction, prior: &SourcePrior, nodes: usize) -> Result<Self> {
        if mixing.dim() != 2 || prior.n != 2 {
            return Err(Error::invalid("the Darmois oracle is two-dimensional"));
        }
        if nodes < 3 {
            return Err(Error::invalid("quadrature needs at least 3 nodes per axis"));
        }
        // Bounding box of the image of the prior's support box, traced
        // through its boundary and interior.
        let (lo, hi) = prior.quadrature_range();
        let trace = 256;
        let mut bmin = [f64::INFINITY; 2];
        let mut bmax = [f64::NEG_INFINITY; 2];
        for i in 0..=trace {
            for j in 0..=trace {
                let s = ndarray::arr1(&[
                    lo + (hi - lo) * i as f64 / trace as f64,
                    lo + (hi - lo) * j as f64 / trace as f64,
                ]);
                let x = mixing.forward(s.view());
                for d in 0..2 {
                    bmin[d] = bmin[d].min(x[d]);
                    bmax[d] = bmax[d].max(x[d]);
                }
            }
        }
        let x1 = Array1::linspace(bmin[0], bmax[0], nodes);
        let x2 = Array1::linspace(bmin[1], bmax[1], nodes);
        let h1 = x1[1] - x1[0];
        let h2 = x2[1] - x2[0];
        let mut conditional_cum = Array2::zeros((nodes, nodes));
        let mut point = Array1::zeros(2);
        for (i, &a) in x1.iter().enumerate() {
            point[0] = a;
            let mut prev = 0.0;
            let mut acc = 0.0;
            for (j, &b) in x2.iter().enumerate() {
                point[1] = b;
                let v = mixing.true_log_density(prior, point.view())?.exp();
                if j > 0 {
                    acc += 0.5 * h2 * (prev + v);
                }
                conditional_cum[[i, j]] = acc;
                prev = v;
            }
        }
        let marg = conditional_cum.column(nodes - 1).to_owned();
        let mut marginal_cdf = Array1::zeros(nodes);
        let mut acc = 0.0;
        for i in 1..nodes {
            acc += 0.5 * h1 * (marg[i - 1] + marg[i]);
            marginal_cdf[i] = acc;
        }
        let deficit = (1.0 - acc).abs();
        if deficit > DARMOIS_MASS_TOL {
            return Err(Error::QuadratureDeficit { deficit });
        }
        Ok(Self {
            x1,
            x2,
            conditional_cum,
            marginal_cdf,
            mass: acc,
        })
    }

    /// Total quadrature mass of the density over the grid.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// `(F(x₁), F(x₂ | x₁))`.
    pub fn transform(&self, x: [f64; 2]) -> Result<[f64; 2]> {
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "Darmois input".into(),
                index: i,
            });
        }
        let (k, t) = cell(&self.x1, x[0]);
        let (j, u) = cell(&self.x2, x[1]);
        let first = ((1.0 - t) * self.marginal_cdf[k] + t * self.marginal_cdf[k + 1]) / self.mass;
        let row = |r: usize| (1.0 - u) * self.conditional_cum[[r, j]] + u * self.conditional_cum[[r, j + 1]];
        let last = self.x2.len() - 1;
        let num = (1.0 - t) * row(k) + t * row(k + 1);
        let den = (1.0 - t) * self.conditional_cum[[k, last]] + t * self.conditional_cum[[k + 1, last]];
        let second = if den > 0.0 { (num / den).clamp(0.0, 1.0) } else { 0.5 };
        Ok([first.clamp(0.0, 1.0), second])
    }
}

/// Grid cell `k` and offset `t ∈ [0, 1]` of `v`, clamped to the grid.
fn cell(grid: &Array1<f64>, v: f64) -> (usize, f64) {
    let n = grid.len();
    let h = grid[1] - grid[0];
    let pos = ((v - grid[0]) / h).clamp(0.0, (n - 1) as f64);
    let k = (pos.floor() as usize).min(n - 2);
    (k, pos - k as f64)
}

/// Darmois transform of one point; builds a fresh oracle (use
/// [`DarmoisOracle`] directly to transform many points).
pub fn darmois_2d(m: &MixingFunction, prior: &SourcePrior, x: [f64; 2], nodes: usize) -> Result<[f64; 2]> {
    DarmoisOracle::new(m, prior, nodes)?.transform(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn identity_mixing(n: usize, layers: usize) -> MixingFunction {
        let l = (0..layers)
            .map(|_| MixingLayer {
                weight: Matrix::eye(n),
                bias: Array1::zeros(n),
            })
            .collect();
        MixingFunction::from_layers(l, DEFAULT_SLOPE, InitKind::Orthogonal, 0).unwrap()
    }

    #[test]
    fn leaky_tanh_values() {
        assert_eq!(leaky_tanh(0.0, 0.1), 0.0);
        assert_abs_diff_eq!(leaky_tanh(1.0, 0.1), 0.86159, epsilon = 1e-5);
        assert_abs_diff_eq!(leaky_tanh_inverse(leaky_tanh(1.0, 0.1), 0.1).unwrap(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(leaky_tanh_inverse(0.861_594_155_955_764_9, 0.1).unwrap(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn leaky_tanh_round_trip_on_interval() {
        for i in 0..=1000 {
            let x = -5.0 + 10.0 * i as f64 / 1000.0;
            let back = leaky_tanh_inverse(leaky_tanh(x, 0.1), 0.1).unwrap();
            assert!((back - x).abs() < 1e-10, "{x}");
        }
        // far tails are dominated by the linear part
        assert_abs_diff_eq!(
            leaky_tanh_inverse(leaky_tanh(1e4, 0.1), 0.1).unwrap(),
            1e4,
            epsilon = 1e-6
        );
    }

    #[test]
    fn leaky_tanh_inverse_rejects_bad_slope() {
        assert!(leaky_tanh_inverse(0.3, 0.0).is_err());
    }

    #[test]
    fn identity_mixings() {
        let m = identity_mixing(3, 1);
        let s = array![0.3, -1.2, 2.0];
        assert_eq!(m.forward(s.view()), s);
        assert_eq!(m.inverse(s.view()).unwrap(), s);
        let m2 = identity_mixing(3, 2);
        assert_eq!(m2.forward(Array1::zeros(3).view()), Array1::<f64>::zeros(3));
    }

    #[test]
    fn orthogonal_layers_are_orthogonal_and_seeded() {
        let m = sample_mixing(5, 4, InitKind::Orthogonal, 42).unwrap();
        for l in m.layers() {
            let wtw = l.weight.t().dot(&l.weight);
            assert!(crate::diffmath::linalg::max_abs_diff(wtw.view(), Matrix::eye(5).view()) < 1e-10);
        }
        let again = sample_mixing(5, 4, InitKind::Orthogonal, 42).unwrap();
        assert_eq!(m, again);
        let other = sample_mixing(5, 4, InitKind::Orthogonal, 43).unwrap();
        assert_ne!(m, other);
    }

    #[test]
    fn deeper_mixings_extend_shallower_ones() {
        let a = sample_mixing(5, 2, InitKind::Orthogonal, 7).unwrap();
        let b = sample_mixing(5, 6, InitKind::Orthogonal, 7).unwrap();
        assert_eq!(a.layers(), &b.layers()[..2]);
    }

    #[test]
    fn uniform_init_has_zero_biases_and_bounded_weights() {
        let m = sample_mixing(5, 3, InitKind::Uniform, 9).unwrap();
        let a = 1.0 / 5f64.sqrt();
        for l in m.layers() {
            assert!(l.bias.iter().all(|&b| b == 0.0));
            assert!(l.weight.iter().all(|&w| w.abs() <= a));
        }
    }

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(sample_mixing(1, 2, InitKind::Orthogonal, 0).is_err());
        assert!(sample_mixing(3, 0, InitKind::Orthogonal, 0).is_err());
        let singular = vec![MixingLayer {
            weight: array![[1.0, 2.0], [2.0, 4.0]],
            bias: Array1::zeros(2),
        }];
        assert!(MixingFunction::from_layers(singular, 0.1, InitKind::Orthogonal, 0).is_err());
    }

    #[test]
    fn single_orthogonal_layer_keeps_gaussian_density() {
        let m = sample_mixing(2, 1, InitKind::Orthogonal, 5).unwrap();
        // strip the bias to get a pure rotation
        let l = vec![MixingLayer {
            weight: m.layers()[0].weight.clone(),
            bias: Array1::zeros(2),
        }];
        let rot = MixingFunction::from_layers(l, 0.1, InitKind::Orthogonal, 5).unwrap();
        let prior = SourcePrior::new(PriorKind::StandardNormal, 2);
        let x = array![0.7, -1.3];
        assert_abs_diff_eq!(
            rot.true_log_density(&prior, x.view()).unwrap(),
            prior.log_density(x.view()),
            epsilon = 1e-12
        );
        let id = identity_mixing(2, 1);
        assert_abs_diff_eq!(
            id.true_log_density(&prior, array![0.0, 0.0].view()).unwrap(),
            -(2.0 * std::f64::consts::PI).ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn json_round_trip_and_validation() {
        let m = sample_mixing(3, 3, InitKind::Orthogonal, 1).unwrap();
        let text = m.to_json().unwrap();
        assert!(text.contains("\"L\": 3"));
        assert_eq!(MixingFunction::from_json(&text).unwrap(), m);
        let bad = text.replacen("\"L\": 3", "\"L\": 4", 1);
        assert!(MixingFunction::from_json(&bad).is_err());
        let unknown = text.replacen("\"seed\"", "\"extra\": 1, \"seed\"", 1);
        assert!(MixingFunction::from_json(&unknown).is_err());
    }

    #[test]
    fn dataset_is_deterministic_and_consistent() {
        let m = sample_mixing(3, 2, InitKind::Orthogonal, 2).unwrap();
        let prior = SourcePrior::new(PriorKind::StandardNormal, 3);
        assert!(sample_dataset(&m, &prior, 0, 1).is_err());
        let a = sample_dataset(&m, &prior, 50, 1).unwrap();
        let b = sample_dataset(&m, &prior, 50, 1).unwrap();
        assert_eq!(a, b);
        for (s, x) in a.sources.rows().into_iter().zip(a.observations.rows()) {
            assert_eq!(m.forward(s), x.to_owned());
        }
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("s1,s2,s3,x1,x2,x3\n"));
        assert_eq!(text.lines().count(), 51);
    }

    #[test]
    fn darmois_identity_cases() {
        let id = identity_mixing(2, 1);
        let uni = SourcePrior::new(PriorKind::Uniform01, 2);
        let o = DarmoisOracle::new(&id, &uni, 257).unwrap();
        let out = o.transform([0.3, 0.8]).unwrap();
        assert_abs_diff_eq!(out[0], 0.3, epsilon = 1e-9);
        assert_abs_diff_eq!(out[1], 0.8, epsilon = 1e-9);

        let gauss = SourcePrior::new(PriorKind::StandardNormal, 2);
        let o = DarmoisOracle::new(&id, &gauss, 513).unwrap();
        let out = o.transform([0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(out[0], 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(out[1], 0.5, epsilon = 1e-6);
        assert!(DarmoisOracle::new(&sample_mixing(3, 1, InitKind::Orthogonal, 0).unwrap(), &gauss, 64).is_err());
    }
}
