use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn nlfeat(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlfeat"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn sample(dir: &Path, bench: &str, n: usize, seed: u64, file: &str) {
    let out = nlfeat(dir, &["sample", "--benchmark", bench, "--n", &n.to_string(), "--seed", &seed.to_string(), "--file", file]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn learn_recovers_u1_feature() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    sample(d, "u1", 250, 1, "train.csv");
    let out = nlfeat(d, &["learn", "--samples", "train.csv", "--out", "sur"]);
    assert_eq!(out.status.code(), Some(0));
    let m = json(&d.join("sur/metrics.json"));
    let scale = m["j_scale"].as_f64().unwrap();
    let sur_after = m["j_after"].as_f64().unwrap();
    assert!(sur_after <= 1e-10 * scale, "{m}");
    for f in ["coeffs.txt", "basis.json", "trace.csv", "config.json", "timing.json"] {
        assert!(d.join("sur").join(f).exists(), "{f}");
    }

    let out = nlfeat(d, &["learn", "--samples", "train.csv", "--method", "gsi", "--out", "gsi"]);
    assert_eq!(out.status.code(), Some(0));
    let g = json(&d.join("gsi/metrics.json"));
    assert!(g["j_after"].as_f64().unwrap() <= g["j_before"].as_f64().unwrap() + 1e-12);
    assert!(g["j_after"].as_f64().unwrap() <= sur_after + 1e-12);
}

#[test]
fn emitted_config_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    sample(d, "u3", 60, 4, "train.csv");
    let out = nlfeat(d, &["learn", "--samples", "train.csv", "--method", "gli", "--out", "a"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut cfg = json(&d.join("a/config.json"));
    cfg["io"]["out"] = Value::String("b".into());
    std::fs::write(d.join("again.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = nlfeat(d, &["learn", "--config", "again.json"]);
    assert_eq!(out.status.code(), Some(0));
    for f in ["coeffs.txt", "metrics.json", "trace.csv", "basis.json"] {
        assert_eq!(
            std::fs::read(d.join("a").join(f)).unwrap(),
            std::fs::read(d.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn regress_writes_model_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    sample(d, "u1", 100, 2, "train.csv");
    sample(d, "u1", 200, 3, "test.csv");
    assert!(nlfeat(d, &["learn", "--samples", "train.csv", "--out", "f"]).status.success());
    let out = nlfeat(
        d,
        &[
            "regress", "--samples", "train.csv", "--test-samples", "test.csv", "--coeffs", "f/coeffs.txt", "--basis",
            "f/basis.json", "--out", "r",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = json(&d.join("r/regression.json"));
    let rms_u = 0.8; // u1 takes values in [-1, 1]
    assert!(m["err_train"].as_f64().unwrap() >= 0.0);
    assert!(m["err_test"].as_f64().unwrap() <= rms_u);
    assert!(d.join("r/model.txt").exists());
}

#[test]
fn malformed_sample_row_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.csv"), "x1,u,du1\n0.1,0.2,0.3\n0.2,0.3\n").unwrap();
    let out = nlfeat(d, &["learn", "--samples", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(nlfeat(d, &["learn"]).status.code(), Some(2));
    assert_eq!(nlfeat(d, &["learn", "--samples", "missing.csv"]).status.code(), Some(2));
    assert_eq!(nlfeat(d, &["frobnicate"]).status.code(), Some(2));
    std::fs::write(d.join("c.json"), r#"{"learn": {"metod": "sur"}}"#).unwrap();
    assert_eq!(nlfeat(d, &["learn", "--config", "c.json"]).status.code(), Some(2));
}

#[test]
fn print_config_lists_every_section() {
    let dir = tempfile::tempdir().unwrap();
    let out = nlfeat(dir.path(), &["--print-config", "--seed", "7", "benchmark", "--full"]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["seed", "basis", "learn", "regression", "experiment", "deviation", "io"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert_eq!(v["seed"], 7);
    assert_eq!(v["experiment"]["n_realizations"], 20);
    assert_eq!(v["regression"]["log10_gamma"].as_array().unwrap().len(), 30);
}

#[test]
fn check_deviation_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = nlfeat(d, &["check-deviation", "--out", "dev"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let v = json(&d.join("dev/deviation.json"));
    assert_eq!(v["reports"].as_array().unwrap().len(), 2);

    std::fs::write(d.join("q.json"), r#"{"deviation": {"case": "quadratic", "n_samples": 20000}}"#).unwrap();
    assert_eq!(nlfeat(d, &["check-deviation", "--config", "q.json", "--out", "q"]).status.code(), Some(0));

    std::fs::write(d.join("s.json"), r#"{"deviation": {"s": 0.0, "large": false}}"#).unwrap();
    let out = nlfeat(d, &["check-deviation", "--config", "s.json", "--out", "s"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unsupported"));

    std::fs::write(d.join("e.json"), r#"{"deviation": {"eps_grid": []}}"#).unwrap();
    assert_eq!(nlfeat(d, &["check-deviation", "--config", "e.json", "--out", "e"]).status.code(), Some(2));
}

#[test]
fn check_deviation_flags_violations() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // s = 20 overstates concavity: P(h <= 0.9 q) = 0.474 against a bound of about 0.19
    std::fs::write(
        d.join("v.json"),
        r#"{"deviation": {"s": 20.0, "n_samples": 20000, "eps_grid": [0.9], "large": false}}"#,
    )
    .unwrap();
    let out = nlfeat(d, &["check-deviation", "--config", "v.json", "--out", "v"]);
    assert_eq!(out.status.code(), Some(4));
    let v = json(&d.join("v/deviation.json"));
    assert_eq!(v["reports"][0]["violations"], 1);
}

#[test]
fn benchmark_reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = r#"{"experiment": {"benchmark": "u2", "m": 2, "methods": ["sur", "gsi"], "ntrain": [40],
        "n_test": 100, "n_realizations": 2, "basis": [1.0, 2.0]},
        "learn": {"optimizer": {"max_iters": 20}}}"#;
    std::fs::write(d.join("b.json"), cfg).unwrap();
    for o in ["r1", "r2"] {
        let out = nlfeat(d, &["benchmark", "--config", "b.json", "--out", o]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["report.csv", "raw.csv", "report.json"] {
        assert_eq!(std::fs::read(d.join("r1").join(f)).unwrap(), std::fs::read(d.join("r2").join(f)).unwrap());
    }
    let csv = std::fs::read_to_string(d.join("r1/report.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config: "));
    assert_eq!(lines.next().unwrap(), "benchmark,method,m,ntrain,quantile,J_train,J_test,err_train,err_test");
    assert_eq!(lines.count(), 2 * 3);
}
