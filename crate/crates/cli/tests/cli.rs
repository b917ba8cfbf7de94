use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lfm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = lfm(args);
    assert!(
        out.status.success(),
        "lfm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Rows of a CSV written with the `# lfm` header line, keyed by column.
fn table(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let cols = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (cols, rows)
}

fn column(cols: &[String], name: &str) -> usize {
    cols.iter().position(|c| c == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn simulate_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["simulate", "--problem", "van-der-pol", "--seed", "7", "--out", p(&a)]);
    ok(&["simulate", "--problem", "van-der-pol", "--seed", "7", "--out", p(&b)]);
    for f in ["dataset.csv", "dataset.json", "truth.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        assert!(fs::read_to_string(a.join(f)).unwrap().contains("7"));
    }
    let first = fs::read_to_string(a.join("dataset.csv")).unwrap();
    assert!(first.starts_with("# lfm config_hash="));
    assert!(first.lines().next().unwrap().ends_with("seed=7"));
}

#[test]
fn unknown_problem_lists_choices() {
    let out = lfm(&["simulate", "--problem", "lorenz"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for name in ["van-der-pol", "lotka-volterra", "sird"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn bad_flags_are_argument_errors() {
    assert_eq!(lfm(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(lfm(&["infer", "--problem", "sird", "--seeds", "3..1"]).status.code(), Some(1));
    assert_eq!(lfm(&["--help"]).status.code(), Some(0));
}

#[test]
fn sird_metadata_records_grid() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--problem", "sird", "--seed", "1", "--out", p(dir.path())]);
    let meta = json(&dir.path().join("dataset.json"));
    assert_eq!(meta["grid"]["t0"], 0.0);
    assert_eq!(meta["grid"]["t_max"], 100.0);
    assert_eq!(meta["grid"]["step"], 0.1);
    assert_eq!(meta["seed"], 1);
}

#[test]
fn infer_without_a_dataset_source_fails() {
    let out = lfm(&["infer", "--problem", "sird"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let out = lfm(&["infer", "--problem", "sird", "--data", "/nonexistent/d.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn infer_runs_one_pass_and_writes_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--problem", "lotka-volterra", "--seed", "3", "--out", p(d)]);
    let data = d.join("dataset.csv");
    ok(&["infer", "--problem", "lotka-volterra", "--data", p(&data), "--out", p(d)]);
    let report = json(&d.join("report.json"));
    assert_eq!(report["passes"]["forward_passes"], 1);
    assert_eq!(report["passes"]["backward_passes"], 1);
    assert_eq!(report["seed"], 3);
    let (cols, rows) = table(&d.join("posterior.csv"));
    assert_eq!(
        cols[..9],
        ["t", "prey_mean", "prey_std", "predator_mean", "predator_std", "a_mean", "a_std", "b_mean", "b_std"]
    );
    assert_eq!(rows.len(), report["grid_points"].as_u64().unwrap() as usize);
    assert!(fs::read_to_string(d.join("posterior.csv")).unwrap().starts_with("# lfm config_hash="));

    // A rerun reproduces every output except the timings.
    let e = d.join("again");
    ok(&["infer", "--problem", "lotka-volterra", "--data", p(&data), "--out", p(&e)]);
    for f in ["posterior.csv", "report.json"] {
        assert_eq!(fs::read(d.join(f)).unwrap(), fs::read(e.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let out = dir.path().join("o");
    fs::write(&cfg, format!(r#"{{"problem": "sird", "seed": 4, "output": "{}"}}"#, p(&out))).unwrap();
    ok(&["simulate", "--config", p(&cfg), "--problem", "van-der-pol"]);
    let meta = json(&out.join("dataset.json"));
    assert_eq!(meta["source"], "van-der-pol");
    assert_eq!(meta["seed"], 4);
}

#[test]
fn eval_scores_a_perfect_estimate_as_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--problem", "van-der-pol", "--seed", "2", "--out", p(d)]);
    let (cols, rows) = table(&d.join("truth.csv"));
    let mu = column(&cols, "mu_native");
    let mut post = String::from("# lfm config_hash=fixture seed=2\nt,mu_native_mean,mu_native_std\n");
    for r in &rows {
        post.push_str(&format!("{},{},0.5\n", r[0], r[mu]));
    }
    let pp = d.join("perfect.csv");
    fs::write(&pp, post).unwrap();
    let out = ok(&[
        "eval",
        "--problem",
        "van-der-pol",
        "--posterior",
        p(&pp),
        "--truth",
        p(&d.join("truth.csv")),
    ]);
    let score: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(score["rmse_native"], 0.0);
    assert_eq!(score["chi2"], 0.0);
    assert_eq!(score["config_hash"], "fixture");
    assert_eq!(score["seed"], 2);
}

#[test]
fn eval_rejects_mismatched_grids() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--problem", "van-der-pol", "--seed", "2", "--out", p(d)]);
    let pp = d.join("short.csv");
    fs::write(&pp, "# lfm config_hash=x seed=2\nt,mu_native_mean,mu_native_std\n0,0,1\n0.1,0,1\n").unwrap();
    let out = lfm(&[
        "eval",
        "--problem",
        "van-der-pol",
        "--posterior",
        p(&pp),
        "--truth",
        p(&d.join("truth.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid mismatch"));
}

#[test]
fn sird_sweep_median_chi2_is_calibrated() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["infer", "--problem", "sird", "--simulate", "--seeds", "0..20", "--out", p(dir.path())]);
    let s = json(&dir.path().join("sweep.json"));
    assert_eq!(s["runs"].as_array().unwrap().len(), 20);
    assert_eq!(s["median_chi2_in_ci90"], true);
    let (lo, hi) = (s["chi2_ci90"][0].as_f64().unwrap(), s["chi2_ci90"][1].as_f64().unwrap());
    assert!((lo - 0.0039).abs() < 1e-4 && (hi - 3.8415).abs() < 1e-4);
    for seed in [0, 19] {
        let score = json(&dir.path().join(format!("seed-{seed}/score.json")));
        assert_eq!(score["seed"], seed);
    }
}

#[test]
fn covid_linear_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = data_dir();
    ok(&[
        "covid",
        "--data",
        p(&data.join("jhu_snapshot")),
        "--events",
        p(&data.join("events_germany.txt")),
        "--out",
        p(d),
    ]);
    let report = json(&d.join("report.json"));
    assert_eq!(report["holdout_days"], 14);
    assert_eq!(report["passes"]["forward_passes"], 1);
    let data_events = report["data_events"].as_f64().unwrap();
    let ode_events = report["ode_events"].as_f64().unwrap();
    assert!((20.0..30.0).contains(&(ode_events / data_events)), "{ode_events} / {data_events}");
    let (cols, rows) = table(&d.join("posterior.csv"));
    let beta = column(&cols, "beta_mean");
    assert!(rows.iter().all(|r| r[beta] > 0.0 && r[beta] < 1.0));
    let events = fs::read_to_string(d.join("events.csv")).unwrap();
    assert!(events.contains("2020-03-22,60,"));
    let validation = fs::read_to_string(d.join("validation.csv")).unwrap();
    assert_eq!(validation.lines().filter(|l| !l.starts_with('#')).count(), 15);
}

#[test]
fn covid_log_space_bounds_are_positive() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&[
        "covid",
        "--log-space",
        "--data",
        p(&data_dir().join("jhu_snapshot")),
        "--out",
        p(d),
    ]);
    let (cols, rows) = table(&d.join("posterior.csv"));
    for name in ["I_mean", "I_lo95", "I_hi95"] {
        let i = column(&cols, name);
        assert!(rows.iter().all(|r| r[i] > 0.0), "{name}");
    }
    let last_t = rows.last().unwrap()[0];
    let report = json(&d.join("report.json"));
    assert_eq!(report["extrapolation"], 31.0);
    assert!(last_t > 31.0);
}

#[test]
fn covid_unknown_country_is_an_argument_error() {
    let out = lfm(&[
        "covid",
        "--data",
        p(&data_dir().join("jhu_snapshot")),
        "--country",
        "Atlantis",
        "--population",
        "1000",
    ]);
    assert_eq!(out.status.code(), Some(1));
}
