use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ima_core::contrast::cima_global;
use ima_core::flows::{build_flow, BaseKind, FlowCheckpoint, FlowConfig, FlowKind, FlowModel};
use ima_core::metrics::{kld_estimate, mcc, MetricsRecord};
use ima_core::mixing::{sample_dataset, sample_mixing_with, DarmoisOracle, InitKind, MixingFunction, MixingOptions, PriorKind, SourcePrior};
use ima_core::training::{train, GenerativeProcess, RegularizerKind, RegularizerSpec, TrainConfig, TrajectoryLog};
use ima_expcli::acceptance;
use ima_expcli::config::{short_hash, SuiteConfig, SuiteKind};
use ima_expcli::plotspec::{export_plot_spec, PlotKind};
use ima_expcli::runner::{write_atomic, Runner};
use ima_expcli::suites::run_suite;
use ima_expcli::{CliError, Result};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "ima", version, about = "IMA nonlinear ICA experiments")]
struct Cli {
    /// JSON config: a suite config for `suite`, a run config for `train`
    /// and `darmois train`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "ima-out")]
    out: PathBuf,
    /// Seed: the mixing seed for `mixing gen`, the training seed elsewhere.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for suites (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or evaluate ground-truth mixings.
    #[command(subcommand)]
    Mixing(MixingCmd),
    /// Estimate C_IMA of a mixing or of a trained flow.
    #[command(subcommand)]
    Cima(CimaCmd),
    /// Spurious (Darmois) solutions.
    #[command(subcommand)]
    Darmois(DarmoisCmd),
    /// Train a full-Jacobian flow on a mixing.
    Train(TrainArgs),
    /// Score a trained flow against its mixing.
    Metrics(MetricsArgs),
    /// Run an experiment suite.
    Suite(SuiteArgs),
    /// Describe a suite CSV as a declarative chart.
    PlotSpec(PlotSpecArgs),
    /// Run the acceptance criteria.
    Check(CheckArgs),
}

#[derive(Subcommand)]
enum MixingCmd {
    /// Sample a mixing; writes mixing.json and optionally dataset.csv.
    Gen(GenArgs),
    /// Summarize a mixing: contrast, invertibility and density.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    layers: usize,
    #[arg(long, default_value = "orthogonal", value_parser = parse_init)]
    init: InitKind,
    #[arg(long, default_value_t = MixingOptions::default().alpha)]
    alpha: f64,
    #[arg(long, default_value_t = MixingOptions::default().bias_scale)]
    bias_scale: f64,
    /// Also sample this many points into dataset.csv.
    #[arg(long, default_value_t = 0)]
    count: usize,
    #[arg(long, default_value = "standard_normal", value_parser = parse_prior)]
    prior: PriorKind,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    mixing: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    count: usize,
    #[arg(long, default_value = "standard_normal", value_parser = parse_prior)]
    prior: PriorKind,
}

#[derive(Subcommand)]
enum CimaCmd {
    /// C_IMA of the mixing, or of `--checkpoint` on the mixing's data.
    Eval(CimaEvalArgs),
}

#[derive(Args)]
struct CimaEvalArgs {
    #[arg(long)]
    mixing: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 4096)]
    count: usize,
    #[arg(long, default_value = "standard_normal", value_parser = parse_prior)]
    prior: PriorKind,
}

#[derive(Subcommand)]
enum DarmoisCmd {
    /// Fit a triangular flow with a Gaussian base by maximum likelihood.
    Train(DarmoisTrainArgs),
    /// Exact 2D Darmois map by quadrature of the true density.
    Exact2d(Exact2dArgs),
}

#[derive(Args)]
struct DarmoisTrainArgs {
    #[arg(long)]
    mixing: PathBuf,
}

#[derive(Args)]
struct Exact2dArgs {
    #[arg(long)]
    mixing: PathBuf,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = ima_core::mixing::DEFAULT_DARMOIS_NODES)]
    nodes: usize,
    #[arg(long, default_value = "standard_normal", value_parser = parse_prior)]
    prior: PriorKind,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    mixing: PathBuf,
    /// `none`, or `<cima|l1|l2>:<strength>`.
    #[arg(long, default_value = "none", value_parser = parse_reg)]
    reg: RegularizerSpec,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    mixing: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    count: usize,
    #[arg(long, default_value = "standard_normal", value_parser = parse_prior)]
    prior: PriorKind,
}

#[derive(Args)]
struct SuiteArgs {
    /// fig1, figA_uniform, recovery, training_dynamics or reg_comparison.
    name: String,
    /// Evaluate the suite's directional criteria; exit 1 if any fails.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct PlotSpecArgs {
    #[arg(long)]
    csv: PathBuf,
    /// fig1, recovery, reg_comparison, training_dynamics or scatter.
    #[arg(long)]
    kind: String,
}

#[derive(Args)]
struct CheckArgs {
    /// Only the exact criteria (1 to 9).
    #[arg(long)]
    quick: bool,
}

fn parse_init(s: &str) -> std::result::Result<InitKind, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown init kind `{s}`"))
}

fn parse_prior(s: &str) -> std::result::Result<PriorKind, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown prior `{s}`"))
}

fn parse_reg(s: &str) -> std::result::Result<RegularizerSpec, String> {
    if s == "none" {
        return Ok(RegularizerSpec::none());
    }
    let (kind, strength) = s.split_once(':').ok_or("expected `none` or `<kind>:<strength>`")?;
    let kind = match kind {
        "cima" => RegularizerKind::Cima,
        "l1" => RegularizerKind::L1,
        "l2" => RegularizerKind::L2,
        _ => return Err(format!("unknown regularizer `{kind}`")),
    };
    let strength: f64 = strength.parse().map_err(|e| format!("bad strength: {e}"))?;
    RegularizerSpec::new(kind, strength).map_err(|e| e.to_string())
}

/// Settings for single training runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    flow: FlowConfig,
    train: TrainConfig,
    prior: PriorKind,
    eval_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let suite = SuiteConfig::defaults(SuiteKind::Recovery);
        Self {
            flow: suite.flow,
            train: suite.train,
            prior: suite.prior,
            eval_samples: suite.eval_samples,
        }
    }
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    cfg.train.validate().map_err(|e| CliError::config(e.to_string()))?;
    Ok(cfg)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn load_mixing(path: &Path) -> Result<MixingFunction> {
    MixingFunction::from_json(&read(path)?).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn load_checkpoint(path: &Path) -> Result<FlowModel> {
    let cp = FlowCheckpoint::from_json(&read(path)?).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok(cp.model)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_trajectory(path: &Path, log: &TrajectoryLog) -> Result<()> {
    let mut buf = Vec::new();
    log.write_csv(&mut buf)?;
    write_file(path, &buf)
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn observations(m: &MixingFunction, prior: &SourcePrior, count: usize, seed: u64) -> Result<(ndarray::Array2<f64>, ndarray::Array2<f64>)> {
    let d = sample_dataset(m, prior, count, seed)?;
    Ok((d.sources, d.observations))
}

fn fit_and_save(cli: &Cli, mixing: &Path, kind: FlowKind, base: BaseKind, reg: RegularizerSpec, stem: &str) -> Result<()> {
    let cfg = run_config(cli)?;
    let m = load_mixing(mixing)?;
    let prior = SourcePrior::new(cfg.prior, m.dim());
    cfg.flow.validate(m.dim()).map_err(|e| CliError::config(e.to_string()))?;
    let model = build_flow(m.dim(), &cfg.flow, kind, base, cfg.train.seed)?;
    let data = GenerativeProcess { mixing: &m, prior: &prior };
    let (fitted, log, status) = match train(&model, data, &cfg.train, &reg) {
        Ok(t) => (t.model, t.log, "ok".to_string()),
        Err(f) => (*f.last_valid, f.log, format!("diverged: {}", f.error)),
    };
    let hash = short_hash(&serde_json::to_string(&cfg)?);
    write_file(&cli.out.join(format!("{stem}.json")), fitted.to_checkpoint(Some(hash)).to_json()?.as_bytes())?;
    write_trajectory(&cli.out.join(format!("{stem}_trajectory.csv")), &log)?;
    let (_, x) = observations(&m, &prior, cfg.eval_samples, cfg.train.seed ^ 1)?;
    let cima = fitted.cima_estimate(x.view())?;
    let kld = kld_estimate(&m, &prior, &fitted, cfg.eval_samples, cfg.train.seed ^ 2)?;
    print_json(&serde_json::json!({
        "status": status,
        "cima": cima.value,
        "cima_se": cima.std_error,
        "kld": kld.value,
        "kld_se": kld.std_error,
    }))
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Mixing(MixingCmd::Gen(a)) => {
            let opts = MixingOptions {
                alpha: a.alpha,
                bias_scale: a.bias_scale,
            };
            let m = sample_mixing_with(a.n, a.layers, a.init, cli.seed.unwrap_or(0), &opts)
                .map_err(|e| CliError::config(e.to_string()))?;
            write_file(&cli.out.join("mixing.json"), m.to_json()?.as_bytes())?;
            if a.count > 0 {
                let prior = SourcePrior::new(a.prior, a.n);
                let d = sample_dataset(&m, &prior, a.count, cli.seed.unwrap_or(0) ^ 1)?;
                let mut buf = Vec::new();
                d.write_csv(&mut buf)?;
                write_file(&cli.out.join("dataset.csv"), &buf)?;
            }
        }
        Command::Mixing(MixingCmd::Eval(a)) => {
            let m = load_mixing(&a.mixing)?;
            let prior = SourcePrior::new(a.prior, m.dim());
            let (s, x) = observations(&m, &prior, a.count, cli.seed.unwrap_or(0))?;
            let cima = cima_global(|p| Ok(m.jacobian(p)), s.view())?;
            let mut max_err: f64 = 0.0;
            let mut logdens = 0.0;
            for (sr, xr) in s.rows().into_iter().zip(x.rows()) {
                let back = m.inverse(xr)?;
                max_err = max_err.max((&back - &sr).iter().fold(0.0f64, |a, v| a.max(v.abs())));
                logdens += m.true_log_density(&prior, xr)?;
            }
            print_json(&serde_json::json!({
                "n": m.dim(),
                "L": m.depth(),
                "cima_true": cima.value,
                "cima_true_se": cima.std_error,
                "max_round_trip_error": max_err,
                "mean_true_log_density": logdens / a.count as f64,
            }))?;
        }
        Command::Cima(CimaCmd::Eval(a)) => {
            let m = load_mixing(&a.mixing)?;
            let prior = SourcePrior::new(a.prior, m.dim());
            let (s, x) = observations(&m, &prior, a.count, cli.seed.unwrap_or(0))?;
            let est = match &a.checkpoint {
                Some(p) => load_checkpoint(p)?.cima_estimate(x.view())?,
                None => cima_global(|p| Ok(m.jacobian(p)), s.view())?,
            };
            print_json(&est)?;
        }
        Command::Darmois(DarmoisCmd::Train(a)) => {
            fit_and_save(cli, &a.mixing, FlowKind::Triangular, BaseKind::Gaussian, RegularizerSpec::none(), "darmois_flow")?;
        }
        Command::Darmois(DarmoisCmd::Exact2d(a)) => {
            let m = load_mixing(&a.mixing)?;
            if m.dim() != 2 {
                return Err(CliError::config("exact2d needs a 2-dimensional mixing"));
            }
            let prior = SourcePrior::new(a.prior, 2);
            let oracle = DarmoisOracle::new(&m, &prior, a.nodes)?;
            let (s, x) = observations(&m, &prior, a.count, cli.seed.unwrap_or(0))?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["s1", "s2", "x1", "x2", "u1", "u2"])?;
            for (sr, xr) in s.rows().into_iter().zip(x.rows()) {
                let u = oracle.transform([xr[0], xr[1]])?;
                w.write_record([sr[0], sr[1], xr[0], xr[1], u[0], u[1]].map(|v| v.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| CliError::io(&cli.out, e.into_error()))?;
            write_file(&cli.out.join("darmois_exact2d.csv"), &bytes)?;
        }
        Command::Train(a) => {
            fit_and_save(cli, &a.mixing, FlowKind::Full, BaseKind::Logistic, a.reg, "flow")?;
        }
        Command::Metrics(a) => {
            let m = load_mixing(&a.mixing)?;
            let model = load_checkpoint(&a.checkpoint)?;
            let prior = SourcePrior::new(a.prior, m.dim());
            let seed = cli.seed.unwrap_or(0);
            let (s, x) = observations(&m, &prior, a.count, seed)?;
            let y = model.transform(x.view());
            let matched = mcc(s.view(), y.view())?;
            let kld = kld_estimate(&m, &prior, &model, a.count, seed ^ 2)?;
            let cima = model.cima_estimate(x.view())?;
            let record = MetricsRecord {
                mixing_seed: m.seed(),
                layers: m.depth(),
                n: m.dim(),
                reg_kind: "unknown".into(),
                strength: f64::NAN,
                run_seed: seed,
                mcc: matched.mcc,
                kld: kld.value,
                kld_se: kld.std_error,
                cima: cima.value,
                cima_se: cima.std_error,
                assignment: matched.assignment,
                matched: matched.matched,
            };
            let mut buf = Vec::new();
            MetricsRecord::write_csv(std::slice::from_ref(&record), &mut buf)?;
            print!("{}", String::from_utf8_lossy(&buf));
            write_file(&cli.out.join("metrics.csv"), &buf)?;
        }
        Command::Suite(a) => {
            let suite: SuiteKind = a.name.parse()?;
            let mut cfg = match &cli.config {
                Some(p) => SuiteConfig::load(p)?,
                None => SuiteConfig::defaults(suite),
            };
            if cfg.suite != suite {
                return Err(CliError::config(format!("config is for suite {}, not {suite}", cfg.suite)));
            }
            if let Some(s) = cli.seed {
                cfg.train.seed = s;
            }
            let out = cfg.out.clone().filter(|_| cli.out == Path::new("ima-out")).unwrap_or_else(|| cli.out.clone());
            let mut runner = Runner::new(out, cli.threads);
            runner.verbose = true;
            let report = run_suite(&cfg, &runner)?;
            println!(
                "suite {} (manifest {}): {} cells computed, {} reused",
                report.suite, report.manifest_hash, report.stats.computed, report.stats.reused
            );
            for p in [&report.csv, &report.plot_spec, &report.manifest].into_iter().chain(&report.extra) {
                println!("wrote {}", p.display());
            }
            if a.check {
                let outcomes = acceptance::suite_checks(suite, &report.csv)?;
                for o in &outcomes {
                    println!("{o}");
                }
                return Ok(outcomes.iter().all(|o| o.passed));
            }
        }
        Command::PlotSpec(a) => {
            let kind: PlotKind = a.kind.parse()?;
            print_json(&export_plot_spec(&a.csv, kind)?)?;
        }
        Command::Check(a) => {
            let mut ok = acceptance::run_exact(|o| println!("{o}")).iter().all(|o| o.passed);
            if !a.quick {
                let mut runner = Runner::new(&cli.out, cli.threads);
                runner.verbose = true;
                ok &= acceptance::run_directional(&runner, cli.seed, |o| println!("{o}"))?
                    .iter()
                    .all(|o| o.passed);
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
