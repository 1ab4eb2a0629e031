use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdsearch"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap_or(f64::NAN)).collect())
        .collect()
}

fn h2(p: f64) -> f64 {
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

#[test]
fn mi_curve_endpoint_matches_closed_form() {
    let d = TempDir::new().unwrap();
    ok(d.path(), &["mi-curve"]);
    let rows = csv_rows(&read(d.path(), "mi_curve.csv"));
    let last = rows.last().unwrap();
    assert_eq!(last[0], 0.5);
    let expect = 1.0 - h2(0.7 * 0.5 + 0.1);
    assert!((last[1] - expect).abs() < 1e-6, "{} vs {expect}", last[1]);
    assert!((last[1] - 0.00723).abs() < 1e-5);
    let peak = rows.iter().map(|r| r[1]).fold(0.0, f64::max);
    assert!(peak > rows[1][1] && peak > last[1], "interior maximum");
}

#[test]
fn mi_curve_for_constant_noise_is_monotone() {
    let d = TempDir::new().unwrap();
    ok(d.path(), &["mi-curve", "--a", "0", "--b", "0.1"]);
    let rows = csv_rows(&read(d.path(), "mi_curve.csv"));
    assert!(rows.windows(2).all(|w| w[1][1] >= w[0][1]));
    let last = rows.last().unwrap();
    assert!((last[1] - (1.0 - h2(0.1))).abs() < 1e-9);
}

#[test]
fn default_grid_step_is_echoed_in_manifest() {
    let d = TempDir::new().unwrap();
    ok(d.path(), &["mi-curve"]);
    let m: serde_json::Value = serde_json::from_str(&read(d.path(), "mi-curve.manifest.json")).unwrap();
    assert_eq!(m["config"]["sim"]["grid_step"], 1e-3);
    assert_eq!(m["command"], "mi-curve");
    assert_eq!(m["seed"], 0);
    assert!(m["version"].is_string() && m["started"].is_string() && m["finished"].is_string());
    let outputs = m["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 1);
    assert!(outputs[0].as_str().unwrap().ends_with("mi_curve.csv"));
}

#[test]
fn exponent_columns_are_ordered_and_nonnegative() {
    let d = TempDir::new().unwrap();
    ok(d.path(), &["exponents", "--rate_points", "21"]);
    let text = read(d.path(), "exponents.csv");
    assert!(text.starts_with("rate,random_coding,forney,burnashev_q_star,yamamoto_itoh,two_phase_burnashev\n"));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 21);
    let r0 = &rows[0];
    assert_eq!(r0[0], 0.0);
    assert!(r0[1] <= r0[2], "random coding <= decision feedback");
    assert!(r0[3] <= r0[4], "fixed-channel bound <= validation");
    assert!(rows.iter().all(|r| r[1..].iter().all(|&v| v >= 0.0)));
    let last = rows.last().unwrap();
    assert!((last[0] - 0.53100).abs() < 5e-6);
    assert_eq!(last[5], 0.0);
    assert!(rows[rows.len() - 2][5] > 0.0);
}

#[test]
fn optimize_reports_the_optimum() {
    let d = TempDir::new().unwrap();
    ok(d.path(), &["optimize"]);
    let v: serde_json::Value = serde_json::from_str(&read(d.path(), "optimize.json")).unwrap();
    let q = v["optimum"]["q_star"].as_f64().unwrap();
    assert!((q - 0.15).abs() < 1e-3);
    assert!((v["capacity_at_zero"].as_f64().unwrap() - 0.53100).abs() < 5e-6);
}

#[test]
fn simulate_smoke_has_all_report_fields() {
    let d = TempDir::new().unwrap();
    ok(d.path(), &["simulate", "--trials", "10"]);
    let v: serde_json::Value = serde_json::from_str(&read(d.path(), "simulate.json")).unwrap();
    for key in [
        "scheme",
        "trials",
        "blocks",
        "errors",
        "error_rate",
        "erasures",
        "erasure_rate",
        "mean_stopping_time",
        "block_length",
        "abandoned",
        "max_query_size",
        "sensors",
        "delta",
        "prior",
        "config",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["scheme"], "nonadaptive");
    assert_eq!(v["trials"], 10);
}

#[test]
fn every_scheme_runs() {
    let d = TempDir::new().unwrap();
    for scheme in ["nonadaptive", "forney", "yamamoto-itoh"] {
        ok(d.path(), &["simulate", "--scheme", scheme, "--trials", "20", "--delta", "0.125"]);
    }
    ok(d.path(), &["simulate", "--scheme", "two-phase", "--trials", "20", "--delta", "0.01"]);
    ok(
        d.path(),
        &["simulate", "--scheme", "moving", "--trials", "20", "--queries", "20", "--delta", "0.5", "--v_max", "0.05"],
    );
    let v: serde_json::Value = serde_json::from_str(&read(d.path(), "simulate.json")).unwrap();
    assert_eq!(v["scheme"], "moving");
    assert!(v["secondary_error_rate"].is_object());
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let args = ["simulate", "--trials", "200", "--seed", "11", "--a", "0", "--b", "0.1", "--sweep", "[16, 24]"];
    ok(a.path(), &args);
    ok(b.path(), &["--threads", "2"].iter().chain(&args).copied().collect::<Vec<_>>());
    for f in ["simulate.json", "simulate_sweep.csv"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
    let c = TempDir::new().unwrap();
    ok(c.path(), &["simulate", "--trials", "200", "--seed", "12", "--a", "0", "--b", "0.1"]);
    assert_ne!(read(a.path(), "simulate.json"), read(c.path(), "simulate.json"));
}

#[test]
fn sweep_rows_are_nonincreasing() {
    let d = TempDir::new().unwrap();
    ok(d.path(), &["simulate", "--trials", "2000", "--a", "0", "--b", "0.1", "--sweep", "[16, 24, 32]"]);
    let rows = csv_rows(&read(d.path(), "simulate_sweep.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), vec![16.0, 24.0, 32.0]);
    assert!(rows.windows(2).all(|w| w[1][6] <= w[0][6]), "{rows:?}");
}

#[test]
fn config_file_is_read_and_flags_override_it() {
    let d = TempDir::new().unwrap();
    let cfg = d.path().join("run.toml");
    std::fs::write(&cfg, "[channel]\na = 0\nb = 0.1\n\n[sim]\ntrials = 7\nseed = 5\n").unwrap();
    ok(d.path(), &["simulate", "--config", cfg.to_str().unwrap(), "--trials", "9"]);
    let m: serde_json::Value = serde_json::from_str(&read(d.path(), "simulate.manifest.json")).unwrap();
    assert_eq!(m["config"]["sim"]["trials"], 9);
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config"]["channel"]["a"], 0.0);
}

#[test]
fn config_errors_exit_2_with_line_numbers() {
    let d = TempDir::new().unwrap();
    let cfg = d.path().join("bad.toml");
    std::fs::write(&cfg, "[channel]\na = 0.7\n\n[sim]\ntrails = 3\n").unwrap();
    let out = run(d.path(), &["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 5"), "{err}");

    std::fs::write(&cfg, "[channel]\na = 0.7\nb = 0.6\n").unwrap();
    let out = run(d.path(), &["mi-curve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let out = run(d.path(), &["simulate", "--scheme", "telepathy"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--scheme"));
    assert!(!d.path().join("simulate.json").exists(), "no output on failure");
}

#[test]
fn infeasible_rate_reports_the_maximum() {
    let d = TempDir::new().unwrap();
    let out = run(d.path(), &["simulate", "--rate", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("0.1413835"), "{err}");
}

#[test]
fn resource_guard_exits_3() {
    let d = TempDir::new().unwrap();
    let out = run(d.path(), &["bounds-audit", "--enumeration_cap", "10"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bounds_audit_writes_table_and_trajectories() {
    let d = TempDir::new().unwrap();
    ok(
        d.path(),
        &[
            "bounds-audit", "--n_max", "4", "--m_max", "6", "--v_maxes", "[0.25]", "--export_trajectories", "true",
            "--queries", "4", "--delta", "0.5", "--v_max", "0.25",
        ],
    );
    let audit = read(d.path(), "bounds_audit.csv");
    assert_eq!(audit.lines().count(), 1 + 4 * 5);
    let trajectories = read(d.path(), "trajectories.csv");
    assert!(trajectories.starts_with("start_sensor,velocity,path_hash\n"));
    assert!(trajectories.lines().count() > 8);
}
