//! Independent units of suite work. A cell is fully described by its
//! [`CellSpec`]; the SHA-256 of the spec's JSON names its cached result, so
//! suites that need the same run share it.

use ima_core::contrast::cima_global;
use ima_core::flows::{build_flow, BaseKind, FlowConfig, FlowKind, FlowModel};
use ima_core::metrics::{kld_estimate, mcc, MetricsRecord};
use ima_core::mixing::{sample_mixing_with, DarmoisOracle, InitKind, MixingFunction, MixingOptions, PriorKind, SourcePrior};
use ima_core::training::{train, GenerativeProcess, RegularizerSpec, TrainConfig, TrajectoryLog};
use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::short_hash;
use crate::error::Result;

/// Evaluation samples are shared by every run on the same mixing.
const EVAL_STREAM: u64 = 0x6576_616c_5f73_7263;
const SCATTER_STREAM: u64 = 0x7363_6174_7465_7231;
/// KLD uses a stream independent of the evaluation sources.
const KLD_STREAM: u64 = 0x6b6c_645f_7374_726d;
/// The C_IMA estimates use at most this many of the evaluation samples.
const CIMA_SAMPLES: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingSpec {
    pub n: usize,
    pub layers: usize,
    pub init_kind: InitKind,
    pub prior: PriorKind,
    pub options: MixingOptions,
    pub seed: u64,
}

impl MixingSpec {
    pub fn build(&self) -> Result<(MixingFunction, SourcePrior)> {
        let m = sample_mixing_with(self.n, self.layers, self.init_kind, self.seed, &self.options)?;
        Ok((m, SourcePrior::new(self.prior, self.n)))
    }

    fn eval_sources(&self, prior: &SourcePrior, count: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ EVAL_STREAM);
        prior.sample(count, &mut rng)
    }

    fn scatter_sources(&self, prior: &SourcePrior, count: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ SCATTER_STREAM);
        prior.sample(count, &mut rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "cell")]
pub enum CellSpec {
    /// True-mixing contrast plus a triangular flow fitted by likelihood.
    Darmois {
        data: MixingSpec,
        flow: FlowConfig,
        train: TrainConfig,
        eval_samples: usize,
    },
    /// Full-Jacobian flow with a regularizer, scored against the sources.
    Unmixing {
        data: MixingSpec,
        reg: RegularizerSpec,
        flow: FlowConfig,
        train: TrainConfig,
        eval_samples: usize,
        /// Recovered scatter points to keep (n = 2 only, else 0).
        scatter_points: usize,
    },
    /// Sources, observations and exact Darmois outputs for a 2D mixing.
    Scatter2d {
        data: MixingSpec,
        points: usize,
        nodes: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DarmoisOutcome {
    pub cima_true: f64,
    pub cima_true_se: f64,
    pub cima_darmois: Option<f64>,
    pub kld_darmois: Option<f64>,
    pub kld_se: Option<f64>,
    pub status: String,
    pub log: TrajectoryLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnmixingOutcome {
    pub record: Option<MetricsRecord>,
    pub status: String,
    pub log: TrajectoryLog,
    /// Recovered sources for the scatter sample, row-major `[y1, y2]`.
    pub scatter: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterOutcome {
    pub sources: Vec<[f64; 2]>,
    pub observations: Vec<[f64; 2]>,
    /// `None` where the quadrature could not evaluate the point.
    pub darmois: Vec<Option<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum CellOutcome {
    Darmois(DarmoisOutcome),
    Unmixing(UnmixingOutcome),
    Scatter2d(ScatterOutcome),
}

impl CellSpec {
    pub fn key(&self) -> String {
        short_hash(&serde_json::to_string(self).expect("cell spec serializes"))
    }

    pub fn label(&self) -> String {
        match self {
            CellSpec::Darmois { data, .. } => format!("darmois n={} L={} seed={}", data.n, data.layers, data.seed),
            CellSpec::Unmixing { data, reg, .. } => format!(
                "unmixing n={} L={} {}={} seed={}",
                data.n,
                data.layers,
                reg.kind().as_str(),
                reg.strength(),
                data.seed
            ),
            CellSpec::Scatter2d { data, .. } => format!("scatter L={} seed={}", data.layers, data.seed),
        }
    }

    /// Runs the cell. Training divergence is reported in the outcome's
    /// status; only setup errors are returned.
    pub fn run(&self) -> Result<CellOutcome> {
        match self {
            CellSpec::Darmois {
                data,
                flow,
                train,
                eval_samples,
            } => run_darmois(data, flow, train, *eval_samples).map(CellOutcome::Darmois),
            CellSpec::Unmixing {
                data,
                reg,
                flow,
                train,
                eval_samples,
                scatter_points,
            } => run_unmixing(data, reg, flow, train, *eval_samples, *scatter_points).map(CellOutcome::Unmixing),
            CellSpec::Scatter2d { data, points, nodes } => run_scatter(data, *points, *nodes).map(CellOutcome::Scatter2d),
        }
    }
}

/// Trains and returns the model to score: the trained one, or on
/// divergence the last finite one together with the error text.
fn fit(
    m: &MixingFunction,
    prior: &SourcePrior,
    model: &FlowModel,
    tc: &TrainConfig,
    reg: &RegularizerSpec,
) -> (FlowModel, TrajectoryLog, String) {
    match train(model, GenerativeProcess { mixing: m, prior }, tc, reg) {
        Ok(t) => (t.model, t.log, "ok".into()),
        Err(f) => (*f.last_valid, f.log, format!("diverged: {}", f.error)),
    }
}

fn run_darmois(data: &MixingSpec, flow: &FlowConfig, tc: &TrainConfig, eval_samples: usize) -> Result<DarmoisOutcome> {
    let (m, prior) = data.build()?;
    let s = data.eval_sources(&prior, eval_samples);
    let s_cima = s.slice(s![..CIMA_SAMPLES.min(eval_samples), ..]);
    let truth = cima_global(|p| Ok(m.jacobian(p)), s_cima)?;
    let model = build_flow(data.n, flow, FlowKind::Triangular, BaseKind::Gaussian, tc.seed)?;
    let (fitted, log, mut status) = fit(&m, &prior, &model, tc, &RegularizerSpec::none());
    let x = m.forward_batch(s_cima);
    let cima = fitted.cima_estimate(x.view());
    let kld = kld_estimate(&m, &prior, &fitted, eval_samples, data.seed ^ KLD_STREAM);
    if let Err(e) = cima.as_ref().map(|_| ()).and(kld.as_ref().map(|_| ())) {
        status = format!("{status}; evaluation failed: {e}");
    }
    Ok(DarmoisOutcome {
        cima_true: truth.value,
        cima_true_se: truth.std_error,
        cima_darmois: cima.as_ref().ok().map(|c| c.value),
        kld_darmois: kld.as_ref().ok().map(|k| k.value),
        kld_se: kld.as_ref().ok().map(|k| k.std_error),
        status,
        log,
    })
}

fn run_unmixing(
    data: &MixingSpec,
    reg: &RegularizerSpec,
    flow: &FlowConfig,
    tc: &TrainConfig,
    eval_samples: usize,
    scatter_points: usize,
) -> Result<UnmixingOutcome> {
    let (m, prior) = data.build()?;
    let model = build_flow(data.n, flow, FlowKind::Full, BaseKind::Logistic, tc.seed)?;
    let (fitted, log, mut status) = fit(&m, &prior, &model, tc, reg);
    let s = data.eval_sources(&prior, eval_samples);
    let x = m.forward_batch(s.view());
    let score = || -> ima_core::Result<MetricsRecord> {
        let y = fitted.transform(x.view());
        let matched = mcc(s.view(), y.view())?;
        let kld = kld_estimate(&m, &prior, &fitted, eval_samples, data.seed ^ KLD_STREAM)?;
        let cima = fitted.cima_estimate(x.slice(s![..CIMA_SAMPLES.min(eval_samples), ..]))?;
        Ok(MetricsRecord {
            mixing_seed: data.seed,
            layers: data.layers,
            n: data.n,
            reg_kind: reg.kind().as_str().to_string(),
            strength: reg.strength(),
            run_seed: tc.seed,
            mcc: matched.mcc,
            kld: kld.value,
            kld_se: kld.std_error,
            cima: cima.value,
            cima_se: cima.std_error,
            assignment: matched.assignment,
            matched: matched.matched,
        })
    };
    let record = match score() {
        Ok(r) => Some(r),
        Err(e) => {
            status = format!("{status}; evaluation failed: {e}");
            None
        }
    };
    let scatter = if data.n == 2 && scatter_points > 0 {
        let xs = m.forward_batch(data.scatter_sources(&prior, scatter_points).view());
        fitted.transform(xs.view()).rows().into_iter().map(|r| [r[0], r[1]]).collect()
    } else {
        Vec::new()
    };
    Ok(UnmixingOutcome {
        record,
        status,
        log,
        scatter,
    })
}

fn run_scatter(data: &MixingSpec, points: usize, nodes: usize) -> Result<ScatterOutcome> {
    let (m, prior) = data.build()?;
    let s = data.scatter_sources(&prior, points);
    let x = m.forward_batch(s.view());
    let oracle = DarmoisOracle::new(&m, &prior, nodes);
    let pair = |r: ndarray::ArrayView1<f64>| [r[0], r[1]];
    let darmois = x
        .rows()
        .into_iter()
        .map(|r| oracle.as_ref().ok().and_then(|o| o.transform(pair(r)).ok()))
        .collect();
    Ok(ScatterOutcome {
        sources: s.rows().into_iter().map(pair).collect(),
        observations: x.rows().into_iter().map(pair).collect(),
        darmois,
    })
}
