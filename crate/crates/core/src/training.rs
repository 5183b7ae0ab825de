//! Regularized maximum-likelihood training of flows with Adam.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contrast::ContrastEstimate;
use crate::diffmath::{compare_with_finite_differences, CheckReport, Tape, Var};
use crate::error::{Error, Result};
use crate::flows::{FlowModel, FlowParams};
use crate::mixing::{MixingFunction, SourcePrior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    None,
    Cima,
    L1,
    L2,
}

impl RegularizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RegularizerKind::None => "none",
            RegularizerKind::Cima => "cima",
            RegularizerKind::L1 => "l1",
            RegularizerKind::L2 => "l2",
        }
    }
}

/// Regularizer and its strength (λ for cima, γ for l1, β for l2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRegularizer")]
pub struct RegularizerSpec {
    kind: RegularizerKind,
    strength: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegularizer {
    kind: RegularizerKind,
    strength: f64,
}

impl TryFrom<RawRegularizer> for RegularizerSpec {
    type Error = Error;
    fn try_from(r: RawRegularizer) -> Result<Self> {
        RegularizerSpec::new(r.kind, r.strength)
    }
}

impl RegularizerSpec {
    /// A zero strength normalizes to kind `none`.
    pub fn new(kind: RegularizerKind, strength: f64) -> Result<Self> {
        if !strength.is_finite() || strength < 0.0 {
            return Err(Error::invalid(format!("regularizer strength {strength} must be finite and ≥ 0")));
        }
        if kind == RegularizerKind::None || strength == 0.0 {
            return Ok(Self::none());
        }
        Ok(Self { kind, strength })
    }

    pub fn none() -> Self {
        Self {
            kind: RegularizerKind::None,
            strength: 0.0,
        }
    }

    pub fn cima(lambda: f64) -> Result<Self> {
        Self::new(RegularizerKind::Cima, lambda)
    }

    pub fn kind(&self) -> RegularizerKind {
        self.kind
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// A fresh batch from the generative process every iteration.
    FreshResample,
    /// Minibatches drawn with replacement from a fixed sample.
    FixedDataset { count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub data_source: DataSource,
    pub eval_every: usize,
    pub eval_batch: usize,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            batch_size: 256,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            data_source: DataSource::FreshResample,
            eval_every: 500,
            eval_batch: 2048,
            grad_clip: 100.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be at least 2"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::invalid("adam parameters out of range"));
        }
        if self.eval_every == 0 || self.eval_batch < 2 {
            return Err(Error::invalid("eval_every must be ≥ 1 and eval_batch ≥ 2"));
        }
        if let DataSource::FixedDataset { count } = self.data_source {
            if count < 2 {
                return Err(Error::invalid("fixed dataset needs at least 2 points"));
            }
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::invalid("grad_clip must be positive"));
        }
        Ok(())
    }
}

/// Terms of the training objective on one batch.
pub struct BatchObjective<'t> {
    /// Maximization objective: mean log-likelihood minus the penalty.
    pub objective: Var<'t>,
    pub loglik: f64,
    /// Mean C_IMA over the batch, for cima regularization.
    pub cima: Option<f64>,
    pub penalty: f64,
}

/// Builds the regularized objective for a batch on the tape.
pub fn batch_loss<'t>(
    model: &FlowModel,
    params: &FlowParams<'t>,
    batch: ArrayView2<f64>,
    reg: &RegularizerSpec,
) -> Result<BatchObjective<'t>> {
    if batch.nrows() < 2 {
        return Err(Error::invalid("batch needs at least 2 rows"));
    }
    let tape = params.tape();
    let x = tape.constant(batch.to_owned());
    let with_cima = reg.kind == RegularizerKind::Cima;
    let ev = model.evaluate_tape(params, x, with_cima)?;
    let loglik = ev.loglik.mean();
    let loglik_v = finite(loglik.item(), "log-likelihood")?;
    let mut objective = loglik;
    let mut cima_v = None;
    let penalty = match reg.kind {
        RegularizerKind::None => None,
        RegularizerKind::Cima => {
            let c = ev.cima.expect("requested").mean();
            cima_v = Some(finite(c.item(), "C_IMA term")?);
            Some(c.scale(reg.strength))
        }
        RegularizerKind::L1 | RegularizerKind::L2 => {
            let mut acc: Option<Var<'t>> = None;
            for w in params.weights() {
                let t = if reg.kind == RegularizerKind::L1 { w.abs() } else { w.square() }.sum();
                acc = Some(match acc {
                    Some(a) => a + t,
                    None => t,
                });
            }
            Some(acc.expect("at least one weight").scale(reg.strength))
        }
    };
    let mut penalty_v = 0.0;
    if let Some(p) = penalty {
        penalty_v = finite(p.item(), "penalty")?;
        objective = objective - p;
    }
    finite(objective.item(), "objective")?;
    Ok(BatchObjective {
        objective,
        loglik: loglik_v,
        cima: cima_v,
        penalty: penalty_v,
    })
}

fn finite(v: f64, term: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Diverged {
            iteration: 0,
            term: term.to_string(),
        })
    }
}

/// Objective value at the model's current parameters.
pub fn objective_value(model: &FlowModel, batch: ArrayView2<f64>, reg: &RegularizerSpec) -> Result<f64> {
    let tape = Tape::new();
    let params = model.tape_params(&tape, false);
    Ok(batch_loss(model, &params, batch, reg)?.objective.item())
}

/// Objective and its gradient, in [`FlowModel::param_arrays`] order.
pub fn objective_gradient(
    model: &FlowModel,
    batch: ArrayView2<f64>,
    reg: &RegularizerSpec,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let tape = Tape::new();
    let params = model.tape_params(&tape, true);
    let obj = batch_loss(model, &params, batch, reg)?;
    let grads = tape.gradients(obj.objective, &params.vars())?;
    Ok((obj.objective.item(), grads))
}

/// Quantity whose parameter gradient is checked by [`gradient_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientTerm {
    /// Batch-mean model log-likelihood.
    LogLikelihood,
    /// Batch-mean C_IMA of the inverse model.
    Cima,
    Objective(RegularizerSpec),
}

fn term_value<'t>(model: &FlowModel, params: &FlowParams<'t>, batch: ArrayView2<f64>, term: GradientTerm) -> Result<Var<'t>> {
    match term {
        GradientTerm::Objective(reg) => Ok(batch_loss(model, params, batch, &reg)?.objective),
        GradientTerm::LogLikelihood | GradientTerm::Cima => {
            let x = params.tape().constant(batch.to_owned());
            let ev = model.evaluate_tape(params, x, term == GradientTerm::Cima)?;
            Ok(match term {
                GradientTerm::Cima => ev.cima.expect("requested").mean(),
                _ => ev.loglik.mean(),
            })
        }
    }
}

/// Compares the tape gradient of `term` with central differences over
/// every parameter of `model`.
pub fn gradient_check(
    model: &FlowModel,
    batch: ArrayView2<f64>,
    term: GradientTerm,
    step: f64,
    tol: f64,
) -> Result<CheckReport> {
    let tape = Tape::new();
    let params = model.tape_params(&tape, true);
    let out = term_value(model, &params, batch, term)?;
    let grads = tape.gradients(out, &params.vars())?;
    let analytic: Vec<f64> = grads.iter().flatten().copied().collect();
    let value = |flat: &[f64]| -> Result<f64> {
        let mut m = model.clone();
        m.set_flat_params(flat)?;
        let tape = Tape::new();
        let params = m.tape_params(&tape, false);
        Ok(term_value(&m, &params, batch, term)?.item())
    };
    compare_with_finite_differences(value, &analytic, &model.flat_params(), step, tol)
}

/// One evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub iteration: usize,
    /// `−objective` on the evaluation batch.
    pub loss: f64,
    pub loglik: f64,
    pub cima: f64,
    pub cima_stderr: f64,
    pub wallclock_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub records: Vec<TrajectoryRecord>,
}

impl TrajectoryLog {
    pub fn first(&self) -> Option<&TrajectoryRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&TrajectoryRecord> {
        self.records.last()
    }

    /// Equal in every field except wall-clock time.
    pub fn same_values(&self, other: &TrajectoryLog) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.iteration == b.iteration
                    && a.loss == b.loss
                    && a.loglik == b.loglik
                    && a.cima == b.cima
                    && a.cima_stderr == b.cima_stderr
            })
    }

    /// CSV with header `iteration,loss,loglik,cima,cima_stderr,wallclock_s`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iteration,loss,loglik,cima,cima_stderr,wallclock_s")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{:.3}",
                r.iteration, r.loss, r.loglik, r.cima, r.cima_stderr, r.wallclock_s
            )?;
        }
        Ok(())
    }
}

/// A finished run.
#[derive(Debug, Clone)]
pub struct TrainedFlow {
    pub model: FlowModel,
    pub log: TrajectoryLog,
}

/// A run that hit a non-finite objective. `last_valid` is the model
/// before the failing step.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub last_valid: Box<FlowModel>,
    pub log: TrajectoryLog,
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training aborted: {}", self.error)
    }
}

impl std::error::Error for TrainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<TrainFailure> for Error {
    fn from(f: TrainFailure) -> Self {
        f.error
    }
}

struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

impl Adam {
    fn new(shapes: &[Array2<f64>]) -> Self {
        let zeros: Vec<Array2<f64>> = shapes.iter().map(|a| Array2::zeros(a.dim())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// Ascent step on `params` along `grads`.
    fn step(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>], cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p += cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
            });
        }
    }
}

/// Observations from a mixing applied to prior samples.
#[derive(Debug, Clone, Copy)]
pub struct GenerativeProcess<'a> {
    pub mixing: &'a MixingFunction,
    pub prior: &'a SourcePrior,
}

impl GenerativeProcess<'_> {
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Array2<f64> {
        let s = self.prior.sample(count, rng);
        self.mixing.forward_batch(s.view())
    }
}

const EVAL_STREAM: u64 = 0x6576_616c;
const DATA_STREAM: u64 = 0x6461_7461;

/// Trains `model` in place of a copy and returns it with its trajectory.
///
/// Each step ascends the objective with Adam, clips the global gradient
/// norm, and re-applies masks and spectral normalization. The trajectory
/// is recorded at iteration 0, every `eval_every` iterations and at the
/// end, on a held-out batch of `eval_batch` points.
pub fn train(
    model: &FlowModel,
    data: GenerativeProcess<'_>,
    config: &TrainConfig,
    reg: &RegularizerSpec,
) -> std::result::Result<TrainedFlow, TrainFailure> {
    let fail = |error: Error, m: &FlowModel, log: &TrajectoryLog| TrainFailure {
        error,
        last_valid: Box::new(m.clone()),
        log: log.clone(),
    };
    let mut log = TrajectoryLog::default();
    if let Err(e) = config.validate() {
        return Err(fail(e, model, &log));
    }
    if data.mixing.dim() != model.n || data.prior.n != model.n {
        return Err(fail(Error::invalid("data and model dimensions differ"), model, &log));
    }
    let start = Instant::now();
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed ^ EVAL_STREAM);
    let eval_x = data.sample(config.eval_batch, &mut eval_rng);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let fixed = match config.data_source {
        DataSource::FreshResample => None,
        DataSource::FixedDataset { count } => {
            let mut drng = ChaCha8Rng::seed_from_u64(config.seed ^ DATA_STREAM);
            Some(data.sample(count, &mut drng))
        }
    };

    let mut model = model.clone();
    let power_iters = model.config.power_iters;
    let mut params = model.param_arrays();
    let mut adam = Adam::new(&params);
    let record = |m: &FlowModel, it: usize| -> Result<TrajectoryRecord> {
        let (ll, ci) = m.log_likelihood_and_cima(eval_x.view())?;
        let loglik = ll.mean().expect("non-empty");
        let cima = ContrastEstimate::from_samples(ci.as_slice().expect("contiguous"));
        let penalty = match reg.kind {
            RegularizerKind::None => 0.0,
            RegularizerKind::Cima => reg.strength * cima.value,
            RegularizerKind::L1 | RegularizerKind::L2 => {
                let l1 = reg.kind == RegularizerKind::L1;
                let total: f64 = m
                    .param_arrays()
                    .iter()
                    .zip(m.param_is_weight())
                    .filter(|(_, w)| *w)
                    .map(|(a, _)| a.iter().map(|v| if l1 { v.abs() } else { v * v }).sum::<f64>())
                    .sum();
                reg.strength * total
            }
        };
        let r = TrajectoryRecord {
            iteration: it,
            loss: penalty - loglik,
            loglik,
            cima: cima.value,
            cima_stderr: cima.std_error,
            wallclock_s: start.elapsed().as_secs_f64(),
        };
        for (v, term) in [(r.loss, "loss"), (r.loglik, "log-likelihood"), (r.cima, "C_IMA")] {
            if !v.is_finite() {
                return Err(Error::Diverged {
                    iteration: it,
                    term: format!("evaluation {term}"),
                });
            }
        }
        Ok(r)
    };
    match record(&model, 0) {
        Ok(r) => log.records.push(r),
        Err(e) => return Err(fail(e, &model, &log)),
    }

    for it in 1..=config.iterations {
        let batch = match &fixed {
            None => data.sample(config.batch_size, &mut rng),
            Some(d) => {
                let idx: Vec<usize> = (0..config.batch_size).map(|_| rng.random_range(0..d.nrows())).collect();
                d.select(ndarray::Axis(0), &idx)
            }
        };
        let (_, mut grads) = match objective_gradient(&model, batch.view(), reg) {
            Ok(v) => v,
            Err(Error::Diverged { term, .. }) => {
                return Err(fail(Error::Diverged { iteration: it, term }, &model, &log));
            }
            Err(e) => return Err(fail(e, &model, &log)),
        };
        let norm = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(fail(
                Error::Diverged {
                    iteration: it,
                    term: "gradient".into(),
                },
                &model,
                &log,
            ));
        }
        if norm > config.grad_clip {
            let s = config.grad_clip / norm;
            grads.iter_mut().for_each(|g| *g *= s);
        }
        let previous = model.clone();
        adam.step(&mut params, &grads, config);
        model.set_param_arrays(&params).expect("shapes unchanged");
        model.spectral_normalize(power_iters);
        params = model.param_arrays();

        if it % config.eval_every == 0 || it == config.iterations {
            match record(&model, it) {
                Ok(r) => log.records.push(r),
                Err(e) => return Err(fail(e, &previous, &log)),
            }
        }
    }
    Ok(TrainedFlow { model, log })
}

/// Outcome of [`equal_area_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EqualAreaReport {
    /// `|log|det J₁| − log|det J₂||` per point.
    pub log_det_gaps: Vec<f64>,
    /// `|log p_base(y₁) − log p_base(y₂)|` per point.
    pub base_gaps: Vec<f64>,
    pub loglik_gaps: Vec<f64>,
    /// Points whose likelihoods and base densities both agree.
    pub eligible: usize,
    /// Eligible points whose log-det gap is within `eps + loglik_tol`.
    pub holding: usize,
    pub fraction_holding: f64,
}

/// Where two models assign matching likelihoods (within `loglik_tol`) and
/// matching base densities (within `eps`) their log-determinants must
/// agree within `eps + loglik_tol`.
pub fn equal_area_check(
    a: &FlowModel,
    b: &FlowModel,
    points: ArrayView2<f64>,
    loglik_tol: f64,
    eps: f64,
) -> Result<EqualAreaReport> {
    let mut report = EqualAreaReport {
        log_det_gaps: Vec::with_capacity(points.nrows()),
        base_gaps: Vec::with_capacity(points.nrows()),
        loglik_gaps: Vec::with_capacity(points.nrows()),
        eligible: 0,
        holding: 0,
        fraction_holding: 1.0,
    };
    for x in points.rows() {
        let (ya, _, da) = a.forward(x)?;
        let (yb, _, db) = b.forward(x)?;
        let (ba, bb) = (a.base.log_density(ya.view()), b.base.log_density(yb.view()));
        let det_gap = (da - db).abs();
        let base_gap = (ba - bb).abs();
        let ll_gap = ((ba + da) - (bb + db)).abs();
        if ll_gap <= loglik_tol && base_gap <= eps {
            report.eligible += 1;
            if det_gap <= eps + loglik_tol {
                report.holding += 1;
            }
        }
        report.log_det_gaps.push(det_gap);
        report.base_gaps.push(base_gap);
        report.loglik_gaps.push(ll_gap);
    }
    if report.eligible > 0 {
        report.fraction_holding = report.holding as f64 / report.eligible as f64;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{build_flow, BaseKind, FlowConfig, FlowKind};
    use crate::mixing::{sample_mixing, InitKind, PriorKind};
    use approx::assert_abs_diff_eq;

    fn tiny(seed: u64) -> FlowModel {
        let cfg = FlowConfig {
            blocks: 2,
            hidden_width: 6,
            init_scale: 0.3,
            ..FlowConfig::default()
        };
        build_flow(2, &cfg, FlowKind::Full, BaseKind::Logistic, seed).unwrap()
    }

    #[test]
    fn zero_strength_is_none() {
        let r = RegularizerSpec::new(RegularizerKind::L1, 0.0).unwrap();
        assert_eq!(r.kind(), RegularizerKind::None);
        assert!(RegularizerSpec::new(RegularizerKind::L2, -1.0).is_err());
        let parsed: RegularizerSpec = serde_json::from_str(r#"{"kind":"cima","strength":0}"#).unwrap();
        assert_eq!(parsed, RegularizerSpec::none());
    }

    #[test]
    fn penalties_closed_form() {
        let mut m = tiny(0);
        let x = ndarray::array![[0.1, 0.2], [0.3, -0.4]];
        let base = objective_value(&m, x.view(), &RegularizerSpec::none()).unwrap();
        let zero: Vec<Array2<f64>> = m
            .param_arrays()
            .iter()
            .zip(m.param_is_weight())
            .map(|(a, w)| if w { Array2::zeros(a.dim()) } else { a.clone() })
            .collect();
        m.set_param_arrays(&zero).unwrap();
        let l2 = RegularizerSpec::new(RegularizerKind::L2, 1e-3).unwrap();
        let plain = objective_value(&m, x.view(), &RegularizerSpec::none()).unwrap();
        assert_eq!(objective_value(&m, x.view(), &l2).unwrap(), plain);
        let mut arrays = m.param_arrays();
        arrays[0][[0, 0]] = 2.0;
        m.set_param_arrays(&arrays).unwrap();
        let plain = objective_value(&m, x.view(), &RegularizerSpec::none()).unwrap();
        assert_abs_diff_eq!(plain - objective_value(&m, x.view(), &l2).unwrap(), 4e-3, epsilon = 1e-15);
        assert!(base.is_finite());
    }

    #[test]
    fn zero_iterations_rejected() {
        let mix = sample_mixing(2, 2, InitKind::Orthogonal, 1).unwrap();
        let prior = SourcePrior::new(PriorKind::StandardNormal, 2);
        let cfg = TrainConfig {
            iterations: 0,
            ..TrainConfig::default()
        };
        let data = GenerativeProcess {
            mixing: &mix,
            prior: &prior,
        };
        assert!(train(&tiny(0), data, &cfg, &RegularizerSpec::none()).is_err());
    }

    #[test]
    fn short_run_is_deterministic_and_logged() {
        let mix = sample_mixing(2, 2, InitKind::Orthogonal, 1).unwrap();
        let prior = SourcePrior::new(PriorKind::StandardNormal, 2);
        let data = GenerativeProcess {
            mixing: &mix,
            prior: &prior,
        };
        let cfg = TrainConfig {
            iterations: 30,
            batch_size: 32,
            eval_every: 10,
            eval_batch: 128,
            ..TrainConfig::default()
        };
        let reg = RegularizerSpec::cima(1.0).unwrap();
        let a = train(&tiny(3), data, &cfg, &reg).unwrap();
        let b = train(&tiny(3), data, &cfg, &reg).unwrap();
        assert!(a.log.same_values(&b.log));
        assert_eq!(a.model, b.model);
        let its: Vec<usize> = a.log.records.iter().map(|r| r.iteration).collect();
        assert_eq!(its, vec![0, 10, 20, 30]);
        let mut out = Vec::new();
        a.log.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("iteration,loss,loglik,cima,cima_stderr,wallclock_s\n0,"));
        let fixed = TrainConfig {
            data_source: DataSource::FixedDataset { count: 64 },
            ..cfg
        };
        assert!(train(&tiny(3), data, &fixed, &reg).is_ok());
    }

    #[test]
    fn equal_area_on_identical_models() {
        let mut m = tiny(4);
        m.spectral_normalize(500);
        let mut copy = m.clone();
        copy.spectral_normalize(5);
        let x = ndarray::array![[0.1, 0.2], [1.3, -0.4], [-2.0, 0.5]];
        let r = equal_area_check(&m, &m, x.view(), 1e-9, 1e-9).unwrap();
        assert!(r.log_det_gaps.iter().all(|&g| g == 0.0));
        assert_eq!(r.holding, 3);
        let r = equal_area_check(&m, &copy, x.view(), 1e-9, 1e-9).unwrap();
        assert!(r.log_det_gaps.iter().all(|&g| g < 1e-10));
    }
}
