//! The full acceptance run: exact criteria, then every suite at desk scale
//! followed by the directional criteria on their CSVs.

use std::path::Path;

use crate::checks::{self, Outcome};
use crate::config::{SuiteConfig, SuiteKind};
use crate::error::Result;
use crate::exact;
use crate::runner::Runner;
use crate::suites::{read_rows, run_suite, SuiteReport};

/// Directional checks that apply to a suite's CSV.
pub fn suite_checks(suite: SuiteKind, csv: &Path) -> Result<Vec<Outcome>> {
    Ok(match suite {
        SuiteKind::Fig1 => {
            let rows = read_rows(csv)?;
            [checks::darmois_gap_trend(&rows), checks::darmois_kld_trend(&rows)].into_iter().flatten().collect()
        }
        SuiteKind::FigAUniform => checks::uniform_init_inversion(&read_rows(csv)?).into_iter().collect(),
        SuiteKind::Recovery => {
            let rows = read_rows(csv)?;
            [checks::regularization_effect(&rows), checks::recovery_over_depth(&rows)].into_iter().flatten().collect()
        }
        SuiteKind::TrainingDynamics => checks::contrast_dynamics(&read_rows(csv)?).into_iter().collect(),
        SuiteKind::RegComparison => checks::regularizer_comparison(&read_rows(csv)?).into_iter().collect(),
    })
}

/// Runs one suite with its defaults and returns its report and checks.
pub fn run_default_suite(suite: SuiteKind, runner: &Runner, seed: Option<u64>) -> Result<(SuiteReport, Vec<Outcome>)> {
    let mut cfg = SuiteConfig::defaults(suite);
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let report = run_suite(&cfg, runner)?;
    let outcomes = suite_checks(suite, &report.csv)?;
    Ok((report, outcomes))
}

/// Directional criteria 10 to 16, sorted by id. Suites share cells through
/// the runner's cache, so the n = 5, L = 4 runs are trained once.
pub fn run_directional(runner: &Runner, seed: Option<u64>, mut on_outcome: impl FnMut(&Outcome)) -> Result<Vec<Outcome>> {
    let mut all = Vec::new();
    for suite in [
        SuiteKind::Recovery,
        SuiteKind::RegComparison,
        SuiteKind::TrainingDynamics,
        SuiteKind::Fig1,
        SuiteKind::FigAUniform,
    ] {
        let (_, outcomes) = run_default_suite(suite, runner, seed)?;
        for o in outcomes {
            on_outcome(&o);
            all.push(o);
        }
    }
    all.sort_by_key(|o| o.id);
    Ok(all)
}

/// Criteria 1 to 9, reporting each as it finishes.
pub fn run_exact(mut on_outcome: impl FnMut(&Outcome)) -> Vec<Outcome> {
    let checks: [fn() -> Outcome; 9] = [
        exact::contrast_nonnegativity,
        exact::contrast_invariance,
        exact::two_dimensional_identities,
        exact::gradient_correctness,
        exact::flow_invertibility,
        exact::matching_and_mcc,
        exact::kld_sanity,
        exact::density_normalization,
        exact::darmois_oracle,
    ];
    checks
        .iter()
        .map(|c| {
            let o = c();
            on_outcome(&o);
            o
        })
        .collect()
}
