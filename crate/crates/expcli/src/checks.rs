//! Directional checks on suite outputs. Each check reads the suite's CSV
//! rows and reports one [`Outcome`]; `None` means the rows do not contain
//! the cells the check needs.

use std::collections::BTreeMap;
use std::fmt;

use crate::suites::{DarmoisRow, MetricsRow, TrajectoryRow};

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: u32,
    pub title: String,
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(id: u32, title: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            id,
            title: title.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} {} {}: {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.detail
        )
    }
}

/// Median of the finite values; `None` if there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    Some(if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) })
}

fn fmt_list(v: &[(String, Option<f64>)]) -> String {
    v.iter()
        .map(|(k, m)| match m {
            Some(m) => format!("{k}={m:.3}"),
            None => format!("{k}=n/a"),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn nondecreasing(v: &[Option<f64>]) -> bool {
    v.iter().all(Option::is_some) && v.windows(2).all(|w| w[0] <= w[1])
}

fn darmois_medians(rows: &[DarmoisRow], layers: usize) -> (Option<f64>, Option<f64>, Option<f64>) {
    let sel: Vec<&DarmoisRow> = rows.iter().filter(|r| r.layers == layers).collect();
    (
        median(sel.iter().map(|r| r.cima_true)),
        median(sel.iter().filter_map(|r| r.cima_darmois)),
        median(sel.iter().filter_map(|r| r.kld_darmois)),
    )
}

fn has_layers(rows: &[DarmoisRow], layers: &[usize]) -> bool {
    layers.iter().all(|l| rows.iter().any(|r| r.layers == *l))
}

/// Median true contrast nondecreasing in L; Darmois learner above the
/// truth for L ∈ {2, 4, 8}.
pub fn darmois_gap_trend(rows: &[DarmoisRow]) -> Option<Outcome> {
    let mut grid: Vec<usize> = rows.iter().map(|r| r.layers).collect();
    grid.sort_unstable();
    grid.dedup();
    if !has_layers(rows, &[2, 4, 8]) {
        return None;
    }
    let truth: Vec<Option<f64>> = grid.iter().map(|&l| darmois_medians(rows, l).0).collect();
    let mono = nondecreasing(&truth);
    let mut above = true;
    let mut pairs = Vec::new();
    for l in [2, 4, 8] {
        let (t, d, _) = darmois_medians(rows, l);
        above &= matches!((t, d), (Some(t), Some(d)) if d > t);
        pairs.push(format!("L{l} darmois {} vs true {}", opt(d), opt(t)));
    }
    let labelled: Vec<(String, Option<f64>)> = grid.iter().map(|l| format!("L{l}")).zip(truth).collect();
    Some(Outcome::new(
        10,
        "true vs Darmois contrast over depth",
        mono && above,
        format!(
            "median cima_true {} ({}); {} ({})",
            fmt_list(&labelled),
            if mono { "nondecreasing" } else { "not monotone" },
            pairs.join(", "),
            if above { "darmois above" } else { "darmois not above" }
        ),
    ))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into())
}

/// Uniform init: Darmois learner below the truth for L ∈ {2, 3, 4, 5}.
pub fn uniform_init_inversion(rows: &[DarmoisRow]) -> Option<Outcome> {
    if !has_layers(rows, &[2, 3, 4, 5]) {
        return None;
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for l in [2, 3, 4, 5] {
        let (t, d, _) = darmois_medians(rows, l);
        ok &= matches!((t, d), (Some(t), Some(d)) if d < t);
        parts.push(format!("L{l} darmois {} vs true {}", opt(d), opt(t)));
    }
    Some(Outcome::new(11, "uniform init inversion", ok, parts.join(", ")))
}

/// Darmois-learner KLD median nondecreasing over L ∈ {2, 4, 8}.
pub fn darmois_kld_trend(rows: &[DarmoisRow]) -> Option<Outcome> {
    if !has_layers(rows, &[2, 4, 8]) {
        return None;
    }
    let v: Vec<Option<f64>> = [2, 4, 8].iter().map(|&l| darmois_medians(rows, l).2).collect();
    let labelled: Vec<(String, Option<f64>)> = ["L2", "L4", "L8"].iter().map(|s| s.to_string()).zip(v.clone()).collect();
    Some(Outcome::new(16, "Darmois KLD over depth", nondecreasing(&v), format!("median kld_darmois {}", fmt_list(&labelled))))
}

type CellKey = (usize, usize, String, u64); // (n, L, reg_kind, strength bits)

fn key(n: usize, layers: usize, kind: &str, strength: f64) -> CellKey {
    (n, layers, kind.to_string(), strength.to_bits())
}

/// Metric medians per (n, L, regularizer) cell.
struct MetricTable {
    mcc: BTreeMap<CellKey, Option<f64>>,
    cima: BTreeMap<CellKey, Option<f64>>,
}

impl MetricTable {
    fn new(rows: &[MetricsRow]) -> Self {
        let mut groups: BTreeMap<CellKey, Vec<&MetricsRow>> = BTreeMap::new();
        for r in rows {
            groups.entry(key(r.n, r.layers, &r.reg_kind, r.strength)).or_default().push(r);
        }
        let med = |f: fn(&MetricsRow) -> Option<f64>| {
            groups
                .iter()
                .map(|(k, g)| (k.clone(), median(g.iter().filter_map(|r| f(r)))))
                .collect()
        };
        Self {
            mcc: med(|r| r.mcc),
            cima: med(|r| r.cima),
        }
    }

    fn mcc(&self, n: usize, l: usize, lambda: f64) -> Option<f64> {
        self.mcc.get(&cima_key(n, l, lambda)).copied().flatten()
    }

    fn cima(&self, n: usize, l: usize, lambda: f64) -> Option<f64> {
        self.cima.get(&cima_key(n, l, lambda)).copied().flatten()
    }

    fn has(&self, k: &CellKey) -> bool {
        self.mcc.contains_key(k)
    }
}

/// λ = 0 is stored as kind `none`.
fn cima_key(n: usize, l: usize, lambda: f64) -> CellKey {
    if lambda == 0.0 {
        key(n, l, "none", 0.0)
    } else {
        key(n, l, "cima", lambda)
    }
}

const LAMBDAS: [f64; 3] = [0.0, 0.5, 1.0];

/// n = 5, L = 4: final contrast strictly decreasing in λ and median MCC at
/// λ = 1 at least 0.05 above λ = 0.
pub fn regularization_effect(rows: &[MetricsRow]) -> Option<Outcome> {
    let t = MetricTable::new(rows);
    if !LAMBDAS.iter().all(|&l| t.has(&cima_key(5, 4, l))) {
        return None;
    }
    let c: Vec<Option<f64>> = LAMBDAS.iter().map(|&l| t.cima(5, 4, l)).collect();
    let decreasing = c.iter().all(Option::is_some) && c.windows(2).all(|w| w[0] > w[1]);
    let (m0, m1) = (t.mcc(5, 4, 0.0), t.mcc(5, 4, 1.0));
    let gap = matches!((m0, m1), (Some(a), Some(b)) if b - a >= 0.05);
    Some(Outcome::new(
        12,
        "regularization effect",
        decreasing && gap,
        format!(
            "median cima λ0={} λ0.5={} λ1={} ({}); median mcc λ0={} λ1={} (gap {}, need ≥ 0.050)",
            opt(c[0]),
            opt(c[1]),
            opt(c[2]),
            if decreasing { "strictly decreasing" } else { "not strictly decreasing" },
            opt(m0),
            opt(m1),
            match (m0, m1) {
                (Some(a), Some(b)) => format!("{:+.3}", b - a),
                _ => "n/a".into(),
            }
        ),
    ))
}

/// Median MCC nonincreasing in L ∈ {2, 4, 8} for each λ, and λ = 1 at
/// least λ = 0 at each L. Uses the largest dimension present.
pub fn recovery_over_depth(rows: &[MetricsRow]) -> Option<Outcome> {
    let t = MetricTable::new(rows);
    let n = rows.iter().map(|r| r.n).max()?;
    if ![2, 4, 8].iter().all(|&l| LAMBDAS.iter().all(|&lam| t.has(&cima_key(n, l, lam)))) {
        return None;
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for lam in LAMBDAS {
        let v: Vec<Option<f64>> = [2, 4, 8].iter().map(|&l| t.mcc(n, l, lam)).collect();
        let mono = v.iter().all(Option::is_some) && v.windows(2).all(|w| w[0] >= w[1]);
        ok &= mono;
        parts.push(format!(
            "λ{lam}: L2={} L4={} L8={}{}",
            opt(v[0]),
            opt(v[1]),
            opt(v[2]),
            if mono { "" } else { " (not nonincreasing)" }
        ));
    }
    for l in [2, 4, 8] {
        let (a, b) = (t.mcc(n, l, 0.0), t.mcc(n, l, 1.0));
        let fine = matches!((a, b), (Some(a), Some(b)) if b >= a);
        ok &= fine;
        if !fine {
            parts.push(format!("L{l}: λ1 {} < λ0 {}", opt(b), opt(a)));
        }
    }
    Some(Outcome::new(13, "recovery over depth", ok, format!("median mcc {}", parts.join("; "))))
}

/// n = 5 trajectories: λ = 0 contrast grows in ≥ 4/5 seeds, λ = 1 grows
/// strictly less than λ = 0 on every seed, and log-likelihood grows in
/// every run.
pub fn contrast_dynamics(rows: &[TrajectoryRow]) -> Option<Outcome> {
    // (strength, seed) -> (first, last)
    let mut runs: BTreeMap<(u64, u64), (&TrajectoryRow, &TrajectoryRow)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.n == 5) {
        let e = runs.entry((r.strength.to_bits(), r.seed)).or_insert((r, r));
        if r.iteration < e.0.iteration {
            e.0 = r;
        }
        if r.iteration > e.1.iteration {
            e.1 = r;
        }
    }
    let delta = |lam: f64, seed: u64| runs.get(&(lam.to_bits(), seed)).map(|(a, b)| b.cima - a.cima);
    let seeds: Vec<u64> = {
        let mut s: Vec<u64> = runs.keys().filter(|k| k.0 == 0f64.to_bits()).map(|k| k.1).collect();
        s.dedup();
        s
    };
    if seeds.is_empty() || !seeds.iter().all(|&s| delta(1.0, s).is_some()) {
        return None;
    }
    let grows = seeds.iter().filter(|&&s| delta(0.0, s).is_some_and(|d| d > 0.0)).count();
    let need = (4 * seeds.len()).div_ceil(5);
    let smaller = seeds
        .iter()
        .filter(|&&s| matches!((delta(0.0, s), delta(1.0, s)), (Some(d0), Some(d1)) if d1 < d0))
        .count();
    let ll_up = runs.values().filter(|(a, b)| b.loglik > a.loglik).count();
    let passed = grows >= need && smaller == seeds.len() && ll_up == runs.len();
    let d0: Vec<String> = seeds.iter().map(|&s| opt(delta(0.0, s))).collect();
    let d1: Vec<String> = seeds.iter().map(|&s| opt(delta(1.0, s))).collect();
    Some(Outcome::new(
        14,
        "contrast during training",
        passed,
        format!(
            "λ0 cima increase > 0 in {grows}/{} seeds (need {need}); λ1 increase smaller on {smaller}/{} seeds; loglik up in {ll_up}/{} runs; Δcima λ0 [{}] λ1 [{}]",
            seeds.len(),
            seeds.len(),
            runs.len(),
            d0.join(", "),
            d1.join(", ")
        ),
    ))
}

/// L1/L2 at strengths {0, 1e-4, 5e-4, 1e-3}: median contrast within 25% of
/// the unregularized median, MCC gains below 0.02, and cima λ = 1 above
/// every L1/L2 cell in median MCC.
pub fn regularizer_comparison(rows: &[MetricsRow]) -> Option<Outcome> {
    let t = MetricTable::new(rows);
    let n = rows.first()?.n;
    let l = rows.first()?.layers;
    let strengths = [1e-4, 5e-4, 1e-3];
    let cells: Vec<CellKey> = ["l1", "l2"]
        .iter()
        .flat_map(|k| strengths.iter().map(move |&s| key(n, l, k, s)))
        .collect();
    let base = cima_key(n, l, 0.0);
    if !t.has(&base) || !t.has(&cima_key(n, l, 1.0)) || !cells.iter().all(|c| t.has(c)) {
        return None;
    }
    let base_c = t.cima[&base];
    let base_m = t.mcc[&base];
    let lam1 = t.mcc(n, l, 1.0);
    let mut ok = true;
    let mut parts = vec![format!("baseline cima {} mcc {}; cima λ1 mcc {}", opt(base_c), opt(base_m), opt(lam1))];
    for kind in ["l1", "l2"] {
        let cs: Vec<Option<f64>> = std::iter::once(base_c)
            .chain(strengths.iter().map(|&s| t.cima[&key(n, l, kind, s)]))
            .collect();
        let ms: Vec<Option<f64>> = std::iter::once(base_m)
            .chain(strengths.iter().map(|&s| t.mcc[&key(n, l, kind, s)]))
            .collect();
        let (Some(b), true) = (base_c, cs.iter().all(Option::is_some)) else {
            ok = false;
            continue;
        };
        let vals: Vec<f64> = cs.iter().flatten().copied().collect();
        let spread = (vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - vals.iter().copied().fold(f64::INFINITY, f64::min))
            / b.abs();
        let gain = ms[1..]
            .iter()
            .map(|m| match (m, base_m) {
                (Some(m), Some(b)) => m - b,
                _ => f64::INFINITY,
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let beaten = ms.iter().all(|m| matches!((lam1, m), (Some(a), Some(m)) if a > *m));
        ok &= spread < 0.25 && gain < 0.02 && beaten;
        parts.push(format!(
            "{kind}: cima spread {:.1}% (need < 25%), max mcc gain {gain:+.3} (need < 0.02), cima λ1 above all: {beaten}; mcc [{}]",
            100.0 * spread,
            ms.iter().map(|m| opt(*m)).collect::<Vec<_>>().join(", ")
        ));
    }
    Some(Outcome::new(15, "regularizer comparison", ok, parts.join("; ")))
}
