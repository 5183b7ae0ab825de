//! The five experiment suites: cell grids, CSV assembly and plot specs.

use std::path::{Path, PathBuf};

use ima_core::mixing::PriorKind;
use ima_core::training::RegularizerSpec;
use serde::{Deserialize, Serialize};

use crate::cells::{CellOutcome, CellSpec, MixingSpec, ScatterOutcome, UnmixingOutcome};
use crate::config::{SuiteConfig, SuiteKind};
use crate::error::{CliError, Result};
use crate::plotspec::{export_plot_spec, PlotKind};
use crate::runner::{write_atomic, RunStats, Runner};

/// One row of the fig1 / figA_uniform CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DarmoisRow {
    #[serde(rename = "L")]
    pub layers: usize,
    pub seed: u64,
    pub cima_true: f64,
    pub cima_darmois: Option<f64>,
    pub kld_darmois: Option<f64>,
    pub status: String,
    pub manifest_hash: String,
}

/// One row of the recovery / reg_comparison CSV: the metrics-record
/// columns, then status and manifest hash. Metrics are empty when the
/// evaluation itself failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub mixing_seed: u64,
    #[serde(rename = "L")]
    pub layers: usize,
    pub n: usize,
    pub reg_kind: String,
    pub strength: f64,
    pub run_seed: u64,
    pub mcc: Option<f64>,
    pub kld: Option<f64>,
    pub kld_se: Option<f64>,
    pub cima: Option<f64>,
    pub cima_se: Option<f64>,
    pub status: String,
    pub manifest_hash: String,
}

/// One evaluation record of one run in the training_dynamics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub n: usize,
    #[serde(rename = "L")]
    pub layers: usize,
    pub seed: u64,
    pub reg_kind: String,
    pub strength: f64,
    pub iteration: usize,
    pub loss: f64,
    pub loglik: f64,
    pub cima: f64,
    pub cima_stderr: f64,
    pub status: String,
    pub manifest_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: SuiteKind,
    pub manifest_hash: String,
    pub csv: PathBuf,
    pub plot_spec: PathBuf,
    pub manifest: PathBuf,
    /// Scatter exports and their plot specs.
    pub extra: Vec<PathBuf>,
    pub stats: RunStats,
}

fn mixing_spec(cfg: &SuiteConfig, n: usize, layers: usize, seed: u64) -> MixingSpec {
    MixingSpec {
        n,
        layers,
        init_kind: cfg.init_kind,
        prior: cfg.prior,
        options: cfg.mixing,
        seed,
    }
}

fn darmois_cell(cfg: &SuiteConfig, layers: usize, seed: u64) -> CellSpec {
    let mut train = cfg.train.clone();
    train.seed = cfg.run_seed(seed);
    CellSpec::Darmois {
        data: mixing_spec(cfg, cfg.n(), layers, seed),
        flow: cfg.flow.clone(),
        train,
        eval_samples: cfg.eval_samples,
    }
}

fn unmixing_cell(cfg: &SuiteConfig, n: usize, layers: usize, reg: RegularizerSpec, seed: u64) -> CellSpec {
    let mut train = cfg.train.clone();
    train.seed = cfg.run_seed(seed);
    CellSpec::Unmixing {
        data: mixing_spec(cfg, n, layers, seed),
        reg,
        flow: cfg.flow.clone(),
        train,
        eval_samples: cfg.eval_samples,
        scatter_points: if n == 2 { cfg.scatter_points } else { 0 },
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(CliError::from)).collect()
}

/// `csv` with its plot spec written next to it as `<stem>.plot.json`.
fn emit_plot_spec(csv: &Path, kind: PlotKind) -> Result<PathBuf> {
    let spec = export_plot_spec(csv, kind)?;
    let path = csv.with_extension("plot.json");
    write_atomic(&path, serde_json::to_string_pretty(&spec)?.as_bytes())?;
    Ok(path)
}

fn unmixing_rows(outcomes: &[&UnmixingOutcome], specs: &[&CellSpec], hash: &str) -> Vec<MetricsRow> {
    outcomes
        .iter()
        .zip(specs)
        .map(|(o, spec)| {
            let CellSpec::Unmixing { data, reg, train, .. } = spec else {
                unreachable!("unmixing outcome from a non-unmixing cell")
            };
            let r = o.record.as_ref();
            MetricsRow {
                mixing_seed: data.seed,
                layers: data.layers,
                n: data.n,
                reg_kind: reg.kind().as_str().into(),
                strength: reg.strength(),
                run_seed: train.seed,
                mcc: r.map(|r| r.mcc),
                kld: r.map(|r| r.kld),
                kld_se: r.map(|r| r.kld_se),
                cima: r.map(|r| r.cima),
                cima_se: r.map(|r| r.cima_se),
                status: o.status.clone(),
                manifest_hash: hash.into(),
            }
        })
        .collect()
}

/// Runs every cell of the suite (reusing stored ones) and writes
/// `<suite>.csv`, `<suite>.plot.json` and `<suite>.manifest.json` into the
/// runner's output directory.
pub fn run_suite(cfg: &SuiteConfig, runner: &Runner) -> Result<SuiteReport> {
    cfg.validate()?;
    let manifest = cfg.manifest();
    let hash = manifest.hash();
    let out = runner.out_dir();
    let name = cfg.suite.name();
    let manifest_path = out.join(format!("{name}.manifest.json"));
    write_atomic(&manifest_path, manifest.to_json().as_bytes())?;
    let csv = out.join(format!("{name}.csv"));
    let mut extra = Vec::new();

    let stats = match cfg.suite {
        SuiteKind::Fig1 | SuiteKind::FigAUniform => {
            let specs: Vec<CellSpec> = cfg
                .layers
                .iter()
                .flat_map(|&l| cfg.seeds.iter().map(move |&s| (l, s)))
                .map(|(l, s)| darmois_cell(cfg, l, s))
                .collect();
            let (outcomes, stats) = runner.run(&specs)?;
            let rows: Vec<DarmoisRow> = specs
                .iter()
                .zip(&outcomes)
                .map(|(spec, o)| {
                    let (CellSpec::Darmois { data, .. }, CellOutcome::Darmois(o)) = (spec, o) else {
                        unreachable!("darmois cell")
                    };
                    DarmoisRow {
                        layers: data.layers,
                        seed: data.seed,
                        cima_true: o.cima_true,
                        cima_darmois: o.cima_darmois,
                        kld_darmois: o.kld_darmois,
                        status: o.status.clone(),
                        manifest_hash: hash.clone(),
                    }
                })
                .collect();
            write_rows(&csv, &rows)?;
            stats
        }
        SuiteKind::Recovery | SuiteKind::RegComparison => {
            let n = cfg.n();
            let mut specs = Vec::new();
            for &l in &cfg.layers {
                for reg in &cfg.regularizers {
                    for &s in &cfg.seeds {
                        specs.push(unmixing_cell(cfg, n, l, *reg, s));
                    }
                }
            }
            let scatter_specs: Vec<CellSpec> = if n == 2 && cfg.suite == SuiteKind::Recovery {
                cfg.layers
                    .iter()
                    .flat_map(|&l| cfg.seeds.iter().map(move |&s| (l, s)))
                    .map(|(l, s)| CellSpec::Scatter2d {
                        data: mixing_spec(cfg, 2, l, s),
                        points: cfg.scatter_points,
                        nodes: cfg.darmois_nodes,
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let all: Vec<CellSpec> = specs.iter().chain(&scatter_specs).cloned().collect();
            let (outcomes, stats) = runner.run(&all)?;
            let unmix: Vec<&UnmixingOutcome> = outcomes[..specs.len()]
                .iter()
                .map(|o| match o {
                    CellOutcome::Unmixing(u) => u,
                    _ => unreachable!("unmixing cell"),
                })
                .collect();
            let spec_refs: Vec<&CellSpec> = specs.iter().collect();
            write_rows(&csv, &unmixing_rows(&unmix, &spec_refs, &hash))?;
            for (spec, o) in scatter_specs.iter().zip(&outcomes[specs.len()..]) {
                let (CellSpec::Scatter2d { data, .. }, CellOutcome::Scatter2d(sc)) = (spec, o) else {
                    unreachable!("scatter cell")
                };
                let runs: Vec<(RegularizerSpec, &UnmixingOutcome)> = specs
                    .iter()
                    .zip(&unmix)
                    .filter_map(|(sp, u)| match sp {
                        CellSpec::Unmixing { data: d, reg, .. } if d == data => Some((*reg, *u)),
                        _ => None,
                    })
                    .collect();
                let path = out.join("recovery_scatter").join(format!("L{}_seed{}.csv", data.layers, data.seed));
                write_scatter(&path, sc, &runs, cfg.prior, &hash)?;
                extra.push(emit_plot_spec(&path, PlotKind::Scatter)?);
                extra.push(path);
            }
            stats
        }
        SuiteKind::TrainingDynamics => {
            let mut specs = Vec::new();
            for &n in &cfg.n {
                for &l in &cfg.layers {
                    for reg in &cfg.regularizers {
                        for &s in &cfg.seeds {
                            specs.push(unmixing_cell(cfg, n, l, *reg, s));
                        }
                    }
                }
            }
            let (outcomes, stats) = runner.run(&specs)?;
            let mut rows = Vec::new();
            for (spec, o) in specs.iter().zip(&outcomes) {
                let (CellSpec::Unmixing { data, reg, .. }, CellOutcome::Unmixing(u)) = (spec, o) else {
                    unreachable!("unmixing cell")
                };
                for r in &u.log.records {
                    rows.push(TrajectoryRow {
                        n: data.n,
                        layers: data.layers,
                        seed: data.seed,
                        reg_kind: reg.kind().as_str().into(),
                        strength: reg.strength(),
                        iteration: r.iteration,
                        loss: r.loss,
                        loglik: r.loglik,
                        cima: r.cima,
                        cima_stderr: r.cima_stderr,
                        status: u.status.clone(),
                        manifest_hash: hash.clone(),
                    });
                }
            }
            write_rows(&csv, &rows)?;
            stats
        }
    };
    let kind = match cfg.suite {
        SuiteKind::Fig1 | SuiteKind::FigAUniform => PlotKind::Fig1,
        SuiteKind::Recovery => PlotKind::Recovery,
        SuiteKind::RegComparison => PlotKind::RegComparison,
        SuiteKind::TrainingDynamics => PlotKind::TrainingDynamics,
    };
    let plot_spec = emit_plot_spec(&csv, kind)?;
    Ok(SuiteReport {
        suite: cfg.suite,
        manifest_hash: hash,
        csv,
        plot_spec,
        manifest: manifest_path,
        extra,
        stats,
    })
}

/// Hue (degrees) and lightness for each source point: the angle about the
/// prior's center, and the radius rank mapped to [0.2, 0.8].
pub fn source_colors(sources: &[[f64; 2]], prior: PriorKind) -> Vec<(f64, f64)> {
    let c = match prior {
        PriorKind::StandardNormal => 0.0,
        PriorKind::Uniform01 => 0.5,
    };
    let radius: Vec<f64> = sources.iter().map(|p| (p[0] - c).hypot(p[1] - c)).collect();
    let mut order: Vec<usize> = (0..radius.len()).collect();
    order.sort_by(|&a, &b| radius[a].total_cmp(&radius[b]));
    let mut rank = vec![0.0; radius.len()];
    let denom = (radius.len().max(2) - 1) as f64;
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r as f64 / denom;
    }
    sources
        .iter()
        .zip(rank)
        .map(|(p, r)| ((p[1] - c).atan2(p[0] - c).to_degrees().rem_euclid(360.0), 0.2 + 0.6 * r))
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_scatter(
    path: &Path,
    sc: &ScatterOutcome,
    runs: &[(RegularizerSpec, &UnmixingOutcome)],
    prior: PriorKind,
    hash: &str,
) -> Result<()> {
    let mut header: Vec<String> = ["s1", "s2", "x1", "x2", "darmois1", "darmois2"].map(String::from).to_vec();
    for (reg, _) in runs {
        let stem = format!("rec_{}_{}_", reg.kind().as_str(), reg.strength());
        header.push(format!("{stem}1"));
        header.push(format!("{stem}2"));
    }
    header.extend(["hue", "lightness", "manifest_hash"].map(String::from));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    let colors = source_colors(&sc.sources, prior);
    for (k, (s, x)) in sc.sources.iter().zip(&sc.observations).enumerate() {
        let d = sc.darmois[k];
        let mut rec = vec![
            s[0].to_string(),
            s[1].to_string(),
            x[0].to_string(),
            x[1].to_string(),
            fmt_opt(d.map(|d| d[0])),
            fmt_opt(d.map(|d| d[1])),
        ];
        for (_, u) in runs {
            let p = u.scatter.get(k);
            rec.push(fmt_opt(p.map(|p| p[0])));
            rec.push(fmt_opt(p.map(|p| p[1])));
        }
        rec.push(colors[k].0.to_string());
        rec.push(colors[k].1.to_string());
        rec.push(hash.to_string());
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ima_core::metrics::MetricsRecord;

    #[test]
    fn metrics_rows_extend_the_record_header() {
        let row = MetricsRow {
            mixing_seed: 0,
            layers: 4,
            n: 5,
            reg_kind: "none".into(),
            strength: 0.0,
            run_seed: 0,
            mcc: None,
            kld: None,
            kld_se: None,
            cima: None,
            cima_se: None,
            status: "ok".into(),
            manifest_hash: "h".into(),
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(&row).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header, format!("{},status,manifest_hash", MetricsRecord::CSV_HEADER));
    }

    #[test]
    fn colors_follow_angle_and_radius() {
        let c = source_colors(&[[1.0, 0.0], [0.0, 2.0], [-3.0, 0.0]], PriorKind::StandardNormal);
        assert_eq!(c[0], (0.0, 0.2));
        assert_eq!(c[1], (90.0, 0.5));
        assert_eq!(c[2], (180.0, 0.8));
    }
}
