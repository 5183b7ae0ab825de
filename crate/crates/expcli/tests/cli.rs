use std::path::Path;
use std::process::{Command, Output};

fn ima(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ima")).args(args).output().expect("spawn ima")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY_RECOVERY: &str = r#"{
  "suite": "recovery",
  "n": 2,
  "layers": [2],
  "seeds": [0, 1],
  "regularizers": [{"kind": "cima", "strength": 0.0}, {"kind": "cima", "strength": 1.0}],
  "train": {"iterations": 60, "eval_every": 30, "eval_batch": 256},
  "flow": {"blocks": 2, "hidden_width": 8},
  "eval_samples": 300,
  "scatter_points": 50,
  "darmois_nodes": 64
}"#;

fn strip_column(csv: &str, drop: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == drop);
    std::iter::once(header.join(","))
        .chain(lines.map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(i, _)| Some(*i) != idx)
                .map(|(_, v)| v)
                .collect::<Vec<_>>()
                .join(",")
        }))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn suite_resumes_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    std::fs::write(&cfg, TINY_RECOVERY).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");

    let first = ima(&["--config", p(&cfg), "--out", p(&a), "suite", "recovery"]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let stdout = String::from_utf8_lossy(&first.stdout);
    assert!(stdout.contains("6 cells computed, 0 reused"), "{stdout}");
    let csv_a = std::fs::read_to_string(a.join("recovery.csv")).unwrap();
    assert_eq!(csv_a.lines().count(), 5);
    assert!(a.join("recovery.plot.json").exists());
    assert!(a.join("recovery.manifest.json").exists());
    assert!(a.join("recovery_scatter/L2_seed0.csv").exists());

    // Interrupted run: drop one cell, rerun, only that one is recomputed.
    let cells: Vec<_> = std::fs::read_dir(a.join("cells")).unwrap().map(|e| e.unwrap().path()).collect();
    let unmixing = cells
        .iter()
        .find(|c| std::fs::read_to_string(c).unwrap().contains("unmixing"))
        .unwrap();
    std::fs::remove_file(unmixing).unwrap();
    let resumed = ima(&["--config", p(&cfg), "--out", p(&a), "suite", "recovery"]);
    assert!(resumed.status.success());
    let stdout = String::from_utf8_lossy(&resumed.stdout);
    assert!(stdout.contains("1 cells computed"), "{stdout}");
    assert_eq!(std::fs::read_to_string(a.join("recovery.csv")).unwrap(), csv_a);

    // A fresh directory gives the same numbers.
    let fresh = ima(&["--config", p(&cfg), "--out", p(&b), "suite", "recovery"]);
    assert!(fresh.status.success());
    let csv_b = std::fs::read_to_string(b.join("recovery.csv")).unwrap();
    assert_eq!(strip_column(&csv_a, "wallclock_s"), strip_column(&csv_b, "wallclock_s"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"suite": "recovery", "itterations": 5}"#).unwrap();
    let out = ima(&["--config", p(&cfg), "--out", p(dir.path()), "suite", "recovery"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("itterations"));

    let wrong = ima(&["--out", p(dir.path()), "suite", "fig9"]);
    assert_eq!(wrong.status.code(), Some(2));

    let no_such = ima(&["--out", p(dir.path()), "suite", "fig1", "--bogus"]);
    assert_eq!(no_such.status.code(), Some(2));
}

#[test]
fn plot_spec_reports_first_missing_column() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("x.csv");
    std::fs::write(&csv, "L,reg_kind,strength,mixing_seed,mcc\n").unwrap();
    let out = ima(&["plot-spec", "--csv", p(&csv), "--kind", "recovery"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("kld"), "{err}");
}

#[test]
fn mixing_gen_eval_and_single_run_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path());
    assert!(ima(&["--out", out, "--seed", "4", "mixing", "gen", "--n", "2", "--layers", "3", "--count", "50"])
        .status
        .success());
    let mixing = dir.path().join("mixing.json");
    assert_eq!(std::fs::read_to_string(dir.path().join("dataset.csv")).unwrap().lines().count(), 51);

    let eval = ima(&["--out", out, "mixing", "eval", "--mixing", p(&mixing), "--count", "500"]);
    assert!(eval.status.success());
    let v: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert!(v["cima_true"].as_f64().unwrap() >= 0.0);
    assert!(v["max_round_trip_error"].as_f64().unwrap() < 1e-8);

    let exact = ima(&["--out", out, "darmois", "exact2d", "--mixing", p(&mixing), "--count", "20", "--nodes", "64"]);
    assert!(exact.status.success());
    let rows = std::fs::read_to_string(dir.path().join("darmois_exact2d.csv")).unwrap();
    for line in rows.lines().skip(1) {
        let u: Vec<f64> = line.split(',').skip(4).map(|s| s.parse().unwrap()).collect();
        assert!(u.iter().all(|v| (0.0..=1.0).contains(v)), "{line}");
    }

    let run_cfg = dir.path().join("run.json");
    std::fs::write(&run_cfg, r#"{"train": {"iterations": 40, "eval_every": 20, "eval_batch": 128}, "flow": {"blocks": 2, "hidden_width": 8}, "eval_samples": 200}"#).unwrap();
    let trained = ima(&["--out", out, "--config", p(&run_cfg), "train", "--mixing", p(&mixing), "--reg", "cima:0.5"]);
    assert!(trained.status.success(), "{}", String::from_utf8_lossy(&trained.stderr));
    let traj = std::fs::read_to_string(dir.path().join("flow_trajectory.csv")).unwrap();
    assert!(traj.starts_with("iteration,loss,loglik,cima,cima_stderr,wallclock_s"));
    assert_eq!(traj.lines().count(), 4);

    let checkpoint = dir.path().join("flow.json");
    let cima = ima(&["--out", out, "cima", "eval", "--mixing", p(&mixing), "--checkpoint", p(&checkpoint), "--count", "200"]);
    assert!(cima.status.success());
    let metrics = ima(&["--out", out, "metrics", "--mixing", p(&mixing), "--checkpoint", p(&checkpoint), "--count", "200"]);
    assert!(metrics.status.success());
    let text = String::from_utf8_lossy(&metrics.stdout);
    assert!(text.starts_with("mixing_seed,L,n,reg_kind,strength,run_seed,mcc"), "{text}");

    let bad_reg = ima(&["--out", out, "train", "--mixing", p(&mixing), "--reg", "l3:1"]);
    assert_eq!(bad_reg.status.code(), Some(2));
}
