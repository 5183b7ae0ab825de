//! Invertible residual flows `g = g_K ∘ … ∘ g_1`, each `g_k(x) = x + h_k(x)`
//! with `Lip(h_k) < 1`. The model maps observations `x` to latents `y`.
//!
//! Jacobians are assembled analytically. On the tape a batch carries the
//! stacked transposed Jacobians `Jᵀ` ((b·n)×n) alongside `y` (b×n), so
//! log-likelihood and C_IMA are first-order differentiable expressions.

mod base;
mod block;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use base::BaseKind;
pub use block::{NormalizationReport, ResidualBlock};

use crate::contrast::ContrastEstimate;
use crate::diffmath::linalg::{logabsdet, Matrix};
use crate::diffmath::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    Full,
    /// Lower-triangular Jacobian: `y_i` depends on `x_1..x_i` only.
    Triangular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub blocks: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Lipschitz bound `c` of every residual branch.
    pub lipschitz: f64,
    /// `α` of the hidden activation.
    pub activation_slope: f64,
    pub power_iters: usize,
    /// Std of the output-layer weights at initialization.
    pub init_scale: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            blocks: 10,
            hidden_width: 64,
            hidden_layers: 2,
            lipschitz: 0.9,
            activation_slope: 0.3,
            power_iters: 5,
            init_scale: 1e-2,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::invalid("flow dimension must be positive"));
        }
        if self.blocks == 0 {
            return Err(Error::invalid("a flow needs at least one block"));
        }
        if self.hidden_width < n {
            return Err(Error::invalid(format!(
                "hidden width {} is smaller than the dimension {n}",
                self.hidden_width
            )));
        }
        if !(self.lipschitz > 0.0 && self.lipschitz < 1.0) {
            return Err(Error::invalid(format!("lipschitz coefficient {} not in (0, 1)", self.lipschitz)));
        }
        if !(self.activation_slope > 0.0) || !self.init_scale.is_finite() || self.init_scale < 0.0 {
            return Err(Error::invalid("activation slope must be positive and init scale finite"));
        }
        if self.power_iters == 0 {
            return Err(Error::invalid("power_iters must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    pub n: usize,
    pub kind: FlowKind,
    pub base: BaseKind,
    pub config: FlowConfig,
    pub blocks: Vec<ResidualBlock>,
    /// Elementwise affine map applied after the blocks, on the latent side.
    pub output: ElementwiseAffine,
}

/// `z ↦ z ⊙ exp(log_scale) + shift`. Being diagonal on the latent side it
/// leaves the contrast of `g⁻¹` unchanged while letting the model change
/// volume freely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementwiseAffine {
    pub log_scale: Array1<f64>,
    pub shift: Array1<f64>,
}

impl ElementwiseAffine {
    pub fn identity(n: usize) -> Self {
        Self {
            log_scale: Array1::zeros(n),
            shift: Array1::zeros(n),
        }
    }
}

/// Seeded near-identity flow, spectrally normalized.
pub fn build_flow(n: usize, config: &FlowConfig, kind: FlowKind, base: BaseKind, seed: u64) -> Result<FlowModel> {
    config.validate(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triangular = kind == FlowKind::Triangular;
    let blocks = (0..config.blocks)
        .map(|_| ResidualBlock::new(n, config, triangular, &mut rng))
        .collect();
    let mut model = FlowModel {
        n,
        kind,
        base,
        config: config.clone(),
        blocks,
        output: ElementwiseAffine::identity(n),
    };
    model.spectral_normalize(config.power_iters);
    Ok(model)
}

/// Parameters of a model placed on a tape, in [`FlowModel::param_arrays`] order.
pub struct FlowParams<'t> {
    tape: &'t Tape,
    blocks: Vec<Vec<(Var<'t>, Var<'t>)>>,
    output: (Var<'t>, Var<'t>),
}

impl<'t> FlowParams<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn vars(&self) -> Vec<Var<'t>> {
        self.blocks
            .iter()
            .flatten()
            .flat_map(|&(w, b)| [w, b])
            .chain([self.output.0, self.output.1])
            .collect()
    }

    /// Weight matrices only (no biases).
    pub fn weights(&self) -> Vec<Var<'t>> {
        self.blocks.iter().flatten().map(|&(w, _)| w).collect()
    }
}

/// Per-sample quantities of a batch on the tape, each b×1 (except `y`).
pub struct TapeEval<'t> {
    pub y: Var<'t>,
    pub log_det: Var<'t>,
    pub loglik: Var<'t>,
    /// C_IMA of `g⁻¹` at `y`, when requested.
    pub cima: Option<Var<'t>>,
}

/// Outcome of [`FlowModel::inverse`].
#[derive(Debug, Clone, PartialEq)]
pub struct Inversion {
    pub x: Array1<f64>,
    /// Largest fixed-point iteration count spent on a single block.
    pub max_block_iterations: usize,
    /// `‖g(x) − y‖`.
    pub residual: f64,
}

const EVAL_CHUNK: usize = 512;

fn leaf(tape: &Tape, row: Array1<f64>, trainable: bool) -> Var<'_> {
    let a = row.insert_axis(Axis(0));
    if trainable {
        tape.param(a)
    } else {
        tape.constant(a)
    }
}

impl FlowModel {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn spectral_normalize(&mut self, power_iters: usize) -> Vec<NormalizationReport> {
        self.blocks
            .iter_mut()
            .map(|b| b.spectral_normalize(power_iters))
            .collect()
    }

    /// Largest empirical Lipschitz ratio of any residual branch.
    pub fn empirical_lipschitz(&self, pairs: usize, seed: u64) -> f64 {
        self.blocks
            .iter()
            .enumerate()
            .map(|(k, b)| b.empirical_lipschitz(pairs, seed.wrapping_add(k as u64)))
            .fold(0.0, f64::max)
    }

    /// All parameter arrays: for each block and layer, the weight then the
    /// bias (as a 1×w row); then the output log-scale and shift (1×n).
    pub fn param_arrays(&self) -> Vec<Array2<f64>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            for (w, bias) in b.weights.iter().zip(&b.biases) {
                out.push(w.clone());
                out.push(bias.clone().insert_axis(Axis(0)));
            }
        }
        out.push(self.output.log_scale.clone().insert_axis(Axis(0)));
        out.push(self.output.shift.clone().insert_axis(Axis(0)));
        out
    }

    /// Whether each entry of [`param_arrays`](Self::param_arrays) is a weight.
    pub fn param_is_weight(&self) -> Vec<bool> {
        self.blocks
            .iter()
            .flat_map(|b| std::iter::repeat_n([true, false], b.depth()))
            .flatten()
            .chain([false, false])
            .collect()
    }

    pub fn set_param_arrays(&mut self, arrays: &[Array2<f64>]) -> Result<()> {
        let expected: usize = self.blocks.iter().map(|b| 2 * b.depth()).sum::<usize>() + 2;
        if arrays.len() != expected {
            return Err(Error::invalid(format!("expected {expected} parameter arrays, got {}", arrays.len())));
        }
        let mut it = arrays.iter();
        for b in &mut self.blocks {
            for (w, bias) in b.weights.iter_mut().zip(b.biases.iter_mut()) {
                let (nw, nb) = (it.next().unwrap(), it.next().unwrap());
                if nw.dim() != w.dim() || nb.dim() != (1, bias.len()) {
                    return Err(Error::ShapeMismatch {
                        op: "set_param_arrays",
                        lhs: w.dim(),
                        rhs: nw.dim(),
                    });
                }
                w.assign(nw);
                bias.assign(&nb.row(0));
            }
        }
        for target in [&mut self.output.log_scale, &mut self.output.shift] {
            let a = it.next().unwrap();
            if a.dim() != (1, self.n) {
                return Err(Error::ShapeMismatch {
                    op: "set_param_arrays",
                    lhs: (1, self.n),
                    rhs: a.dim(),
                });
            }
            target.assign(&a.row(0));
        }
        Ok(())
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.param_arrays().iter().flatten().copied().collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let mut arrays = self.param_arrays();
        let total: usize = arrays.iter().map(|a| a.len()).sum();
        if flat.len() != total {
            return Err(Error::invalid(format!("expected {total} parameters, got {}", flat.len())));
        }
        let mut off = 0;
        for a in &mut arrays {
            for v in a.iter_mut() {
                *v = flat[off];
                off += 1;
            }
        }
        self.set_param_arrays(&arrays)
    }

    /// Places the parameters on `tape`, tracked when `trainable`.
    pub fn tape_params<'t>(&self, tape: &'t Tape, trainable: bool) -> FlowParams<'t> {
        FlowParams {
            tape,
            blocks: self
                .blocks
                .iter()
                .map(|b| b.tape_params(tape, trainable))
                .collect(),
            output: (
                leaf(tape, self.output.log_scale.clone(), trainable),
                leaf(tape, self.output.shift.clone(), trainable),
            ),
        }
    }

    /// Pushes a b×n batch through the flow on the tape.
    pub fn evaluate_tape<'t>(&self, params: &FlowParams<'t>, x: Var<'t>, with_cima: bool) -> Result<TapeEval<'t>> {
        let tape = x.tape();
        let n = self.n;
        let (b, cols) = x.shape();
        assert_eq!(cols, n, "batch has {cols} columns, flow dimension is {n}");
        let eye = Matrix::eye(n);
        let stacked = ndarray::concatenate(Axis(0), &vec![eye.view(); b]).expect("equal widths");
        let mut y = x;
        let mut jt = tape.constant(stacked);
        for (block, p) in self.blocks.iter().zip(&params.blocks) {
            (y, jt) = block.forward_tape(p, y, jt);
        }
        let (log_scale, shift) = params.output;
        let scale = log_scale.exp();
        y = y * tape.constant(Array2::ones((b, 1))).matmul(scale);
        y = y.add_row(shift);
        // Jᵀ·diag(e): scale the columns of every block
        jt = jt * tape.constant(Array2::ones((b * n, 1))).matmul(scale);
        let log_det = jt.block_logabsdet(n)?;
        let loglik = self.base.log_density_tape(y) + log_det;
        // rows of (Jᵀ)⁻¹ are the columns of J⁻¹ = J_{g⁻¹}(y)
        let cima = if with_cima {
            let cols = jt.block_inverse(n)?.row_norms().ln().reshape(b, n).sum_cols();
            Some(cols + log_det)
        } else {
            None
        };
        Ok(TapeEval {
            y,
            log_det,
            loglik,
            cima,
        })
    }

    fn evaluate_chunks(&self, x: ArrayView2<f64>, with_cima: bool) -> Result<(Array1<f64>, Array1<f64>)> {
        let m = x.nrows();
        let mut loglik = Array1::zeros(m);
        let mut cima = Array1::zeros(m);
        for start in (0..m).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(m);
            let tape = Tape::new();
            let params = self.tape_params(&tape, false);
            let xv = tape.constant(x.slice(ndarray::s![start..end, ..]).to_owned());
            let ev = self.evaluate_tape(&params, xv, with_cima).map_err(|e| match e {
                Error::AtPoint { index, source } => Error::AtPoint {
                    index: index + start,
                    source,
                },
                other => other,
            })?;
            loglik
                .slice_mut(ndarray::s![start..end])
                .assign(&ev.loglik.value().column(0));
            if let Some(c) = ev.cima {
                cima.slice_mut(ndarray::s![start..end]).assign(&c.value().column(0));
            }
        }
        Ok((loglik, cima))
    }

    /// `log p_base(g(x)) + log|det J_g(x)|` for each row of `x`.
    pub fn log_likelihood_batch(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.evaluate_chunks(x, false)?.0)
    }

    /// Per-row C_IMA of `g⁻¹` at `g(x)`.
    pub fn cima_batch(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.evaluate_chunks(x, true)?.1)
    }

    /// Log-likelihood and C_IMA of each row in one pass.
    pub fn log_likelihood_and_cima(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        self.evaluate_chunks(x, true)
    }

    /// Monte-Carlo C_IMA estimate over the rows of `x`.
    pub fn cima_estimate(&self, x: ArrayView2<f64>) -> Result<ContrastEstimate> {
        let c = self.cima_batch(x)?;
        Ok(ContrastEstimate::from_samples(c.as_slice().expect("contiguous")))
    }

    pub fn log_likelihood(&self, x: ArrayView1<f64>) -> Result<f64> {
        let (y, _, log_det) = self.forward(x)?;
        Ok(self.base.log_density(y.view()) + log_det)
    }

    pub fn cima(&self, x: ArrayView1<f64>) -> Result<f64> {
        let (_, j, _) = self.forward(x)?;
        crate::contrast::cima_local(crate::diffmath::matinv(j.view())?.view())
    }

    /// `(y, J, log|det J|)` computed directly, block by block.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<(Array1<f64>, Matrix, f64)> {
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "flow input".into(),
                index: i,
            });
        }
        let mut y = x.to_owned();
        let mut j = Matrix::eye(self.n);
        for b in &self.blocks {
            let (h, jh) = b.residual_with_jacobian(y.view());
            y += &h;
            let jb = Matrix::eye(self.n) + jh;
            j = jb.dot(&j);
        }
        let scale = self.output.log_scale.mapv(f64::exp);
        y = y * &scale + &self.output.shift;
        for (mut r, e) in j.rows_mut().into_iter().zip(scale.iter()) {
            r *= *e;
        }
        let log_det = logabsdet(j.view())?;
        Ok((y, j, log_det))
    }

    /// Row-wise `g(x)`.
    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.to_owned();
        for mut row in y.rows_mut() {
            for b in &self.blocks {
                let h = b.residual(row.view());
                row += &h;
            }
            row.zip_mut_with(&self.output.log_scale, |v, s| *v *= s.exp());
            row += &self.output.shift;
        }
        y
    }

    /// Inverts `g` by per-block fixed-point iteration `x ← y_k − h_k(x)`.
    ///
    /// Blocks are solved to a step tolerance derived from `tol`; if the
    /// end-to-end residual still exceeds `tol` the sweep is repeated with
    /// a tighter step tolerance.
    pub fn inverse(&self, y: ArrayView1<f64>, tol: f64, max_iters: usize) -> Result<Inversion> {
        if !(tol > 0.0) {
            return Err(Error::invalid("inverse tolerance must be positive"));
        }
        let k = self.blocks.len();
        let c = self.config.lipschitz;
        let mut step_tol = tol * (1.0 - c) / k as f64;
        let z = (&y - &self.output.shift) * self.output.log_scale.mapv(|s| (-s).exp());
        let mut targets = vec![z; k + 1];
        let mut max_block_iterations = 0;
        loop {
            for (i, b) in self.blocks.iter().enumerate().rev() {
                let target = targets[i + 1].clone();
                let mut x = targets[i].clone();
                let mut converged = false;
                for it in 1..=max_iters {
                    let next = &target - &b.residual(x.view());
                    let step = (&next - &x).mapv(|v| v * v).sum().sqrt();
                    x = next;
                    max_block_iterations = max_block_iterations.max(it);
                    if step <= step_tol {
                        converged = true;
                        break;
                    }
                }
                if !converged {
                    let r = &x + &b.residual(x.view()) - &target;
                    return Err(Error::NoConvergence {
                        what: "flow inverse",
                        iterations: max_iters,
                        residual: r.dot(&r).sqrt(),
                    });
                }
                targets[i] = x;
            }
            let r = self.transform(targets[0].view().insert_axis(Axis(0))).row(0).to_owned() - y;
            let residual = r.dot(&r).sqrt();
            if residual < tol {
                return Ok(Inversion {
                    x: targets.swap_remove(0),
                    max_block_iterations,
                    residual,
                });
            }
            if step_tol < 1e-300 || !residual.is_finite() {
                return Err(Error::NoConvergence {
                    what: "flow inverse",
                    iterations: max_block_iterations,
                    residual,
                });
            }
            step_tol *= 1e-3;
        }
    }

    /// Draws `count` points from the model by inverting base samples.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = self.base.sample(count, self.n, &mut rng);
        let mut out = Array2::zeros(z.dim());
        for (i, row) in z.rows().into_iter().enumerate() {
            let inv = self.inverse(row, 1e-10, 10_000)?;
            out.row_mut(i).assign(&inv.x);
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, training_config_hash: Option<String>) -> FlowCheckpoint {
        FlowCheckpoint {
            model: self.clone(),
            training_config_hash,
        }
    }
}

/// Serialized model plus the hash of the training configuration that
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowCheckpoint {
    #[serde(flatten)]
    pub model: FlowModel,
    pub training_config_hash: Option<String>,
}

impl FlowCheckpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: FlowCheckpoint = serde_json::from_str(s)?;
        let m = &ck.model;
        m.config.validate(m.n)?;
        if m.blocks.len() != m.config.blocks
            || m.blocks.iter().any(|b| b.dim() != m.n)
            || m.output.log_scale.len() != m.n
            || m.output.shift.len() != m.n
        {
            return Err(Error::invalid("checkpoint blocks do not match its configuration"));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn small(kind: FlowKind, base: BaseKind, seed: u64) -> FlowModel {
        let cfg = FlowConfig {
            blocks: 3,
            hidden_width: 8,
            init_scale: 0.5,
            ..FlowConfig::default()
        };
        build_flow(3, &cfg, kind, base, seed).unwrap()
    }

    #[test]
    fn tape_and_direct_paths_agree() {
        let mut m = small(FlowKind::Full, BaseKind::Logistic, 5);
        m.output.log_scale = array![0.5, -1.0, 2.0];
        m.output.shift = array![0.1, 0.0, -3.0];
        let x = array![[0.3, -1.0, 2.0], [1.5, 0.2, -0.7]];
        let (ll, ci) = m.log_likelihood_and_cima(x.view()).unwrap();
        for (i, row) in x.rows().into_iter().enumerate() {
            assert_abs_diff_eq!(ll[i], m.log_likelihood(row).unwrap(), epsilon = 1e-11);
            assert_abs_diff_eq!(ci[i], m.cima(row).unwrap(), epsilon = 1e-11);
        }
        let y = m.transform(x.view());
        let (y0, _, _) = m.forward(x.row(0)).unwrap();
        assert!((&y.row(0) - &y0).iter().all(|v| v.abs() < 1e-14));
        let inv = m.inverse(y.row(1), 1e-10, 1000).unwrap();
        assert!((&inv.x - &x.row(1)).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn identity_model_values() {
        let cfg = FlowConfig {
            blocks: 1,
            hidden_width: 4,
            init_scale: 0.0,
            ..FlowConfig::default()
        };
        let m = build_flow(2, &cfg, FlowKind::Full, BaseKind::Gaussian, 0).unwrap();
        let (y, j, ld) = m.forward(array![0.4, -0.3].view()).unwrap();
        assert_eq!(y, array![0.4, -0.3]);
        assert_eq!(j, Matrix::eye(2));
        assert_eq!(ld, 0.0);
        let zero = array![0.0, 0.0];
        assert_abs_diff_eq!(m.log_likelihood(zero.view()).unwrap(), -1.8378770664093453, epsilon = 1e-12);
        assert_abs_diff_eq!(m.cima(zero.view()).unwrap(), 0.0, epsilon = 1e-15);
        let mut l = m.clone();
        l.base = BaseKind::Logistic;
        assert_abs_diff_eq!(l.log_likelihood(zero.view()).unwrap(), -2.772588722239781, epsilon = 1e-12);
        let inv = m.inverse(array![1.0, 2.0].view(), 1e-10, 100).unwrap();
        assert_eq!(inv.x, array![1.0, 2.0]);
    }

    #[test]
    fn params_round_trip() {
        let m = small(FlowKind::Triangular, BaseKind::Gaussian, 1);
        let mut other = small(FlowKind::Triangular, BaseKind::Gaussian, 2);
        assert_ne!(m, other);
        other.set_flat_params(&m.flat_params()).unwrap();
        other.blocks.iter_mut().zip(&m.blocks).for_each(|(o, b)| o.power_vectors = b.power_vectors.clone());
        assert_eq!(m, other);
        assert_eq!(m.param_is_weight().len(), m.param_arrays().len());
        assert!(other.set_flat_params(&[1.0]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = small(FlowKind::Triangular, BaseKind::Logistic, 3);
        let ck = m.to_checkpoint(Some("abc".into()));
        let back = FlowCheckpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert!(FlowCheckpoint::from_json("{\"n\": 2}").is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let cfg = FlowConfig {
            hidden_width: 2,
            ..FlowConfig::default()
        };
        assert!(build_flow(3, &cfg, FlowKind::Full, BaseKind::Gaussian, 0).is_err());
        let cfg = FlowConfig {
            blocks: 0,
            ..FlowConfig::default()
        };
        assert!(build_flow(3, &cfg, FlowKind::Full, BaseKind::Gaussian, 0).is_err());
    }
}
