use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn windcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_windcast")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

fn path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Ten-minute raw export: a daily cycle plus deterministic wobble, with a
/// few junk rows and a six-hour outage.
fn write_raw(dir: &Path, days: usize) -> PathBuf {
    let mut text = String::from("timestamp,speed,direction\n");
    let start = chrono::NaiveDate::from_ymd_opt(2021, 3, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    for k in 0..days * 144 {
        if (1000..1036).contains(&k) {
            continue;
        }
        let t = start + chrono::Duration::minutes(10 * k as i64);
        let hour = k as f64 / 6.0;
        let speed = 6.0 + 2.5 * (std::f64::consts::TAU * hour / 24.0).sin() + 0.8 * (hour * 0.37).sin() * (hour * 0.011).cos();
        let dir = (180.0 + 40.0 * (hour / 17.0).sin()).rem_euclid(360.0);
        text.push_str(&format!("{},{speed:.3},{dir:.1}\n", t.format("%Y-%m-%d %H:%M")));
        if k % 997 == 0 {
            text.push_str(&format!("{},-3.0,10\n", t.format("%Y-%m-%d %H:%M")));
        }
    }
    let p = path(dir, "raw.csv");
    fs::write(&p, text).unwrap();
    p
}

fn ingest(dir: &Path, days: usize) -> PathBuf {
    let raw = write_raw(dir, days);
    let hourly = path(dir, "hourly.csv");
    let summary = json(&windcast(&["--format", "json", "ingest", s(&raw), "-o", s(&hourly)]));
    // centered windows: the last samples fall in the following midnight slot
    assert_eq!(summary[0]["slots"], Value::from(days * 24 + 1));
    assert!(summary[0]["rows_rejected"].as_u64().unwrap() > 0);
    assert!(summary[0]["gaps"].as_u64().unwrap() >= 4);
    hourly
}

#[test]
fn ingest_train_predict_round_trip() {
    let dir = TempDir::new().unwrap();
    let hourly = ingest(dir.path(), 40);
    let model = path(dir.path(), "model.json");
    let cv = path(dir.path(), "cv.csv");
    let trained = json(&windcast(&[
        "--format", "json", "train", "--series", s(&hourly), "--design", "ss", "--horizon", "2", "--memory", "12",
        "--model", "krr", "--sigma-grid", "2,6", "--lambda-grid", "1e-5,1e-3", "--refine-factor", "1", "--folds", "3",
        "--cutoff", "2021-04-01T00:00:00Z", "-o", s(&model), "--cv-report", s(&cv),
    ]));
    assert_eq!(trained[0]["memory"], 12);
    assert!(trained[0]["sigma"].as_f64().is_some());
    let cv_text = fs::read_to_string(&cv).unwrap();
    assert!(cv_text.starts_with("sigma,lambda,mu,fold_0,fold_1,fold_2,mean_r2,status"));
    assert_eq!(cv_text.lines().count(), 5);

    let rows = json(&windcast(&[
        "--format", "json", "predict", "--model", s(&model), "--series", s(&hourly), "--from", "2021-04-01T00:00:00Z",
    ]));
    let rows = rows.as_array().unwrap();
    assert!(rows.len() > 150);
    assert!(rows.iter().all(|r| r["target"].as_str().unwrap() >= "2021-04-01"));
    let err: f64 = rows.iter().map(|r| (r["y_pred"].as_f64().unwrap() - r["y_true"].as_f64().unwrap()).abs()).sum::<f64>() / rows.len() as f64;
    assert!(err < 1.0, "mean absolute error {err}");

    let csv = windcast(&["predict", "--model", s(&model), "--series", s(&hourly)]);
    assert!(String::from_utf8(csv.stdout).unwrap().starts_with("anchor,target,y_pred,y_true"));
}

#[test]
fn backtest_and_analyze() {
    let dir = TempDir::new().unwrap();
    let hourly = ingest(dir.path(), 50);
    let out = path(dir.path(), "bt");
    let summary = json(&windcast(&[
        "--format", "json", "backtest", "--series", s(&hourly), "--design", "zm-s", "--horizon", "3", "--memory", "6",
        "--model", "linear", "--policy", "online", "--train-size", "300", "--retrain-period", "100",
        "--cutoff", "2021-04-05T00:00:00Z", "--output-dir", s(&out),
    ]));
    let n = summary[0]["n_predictions"].as_u64().unwrap();
    assert_eq!(summary[0]["retrain_count"].as_u64().unwrap(), n.div_ceil(100));
    assert!(summary[0]["gamma_rmse"].as_f64().unwrap() < 1.0);
    let predictions = fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert!(predictions.starts_with("target,y_true,y_pred,window"));
    assert_eq!(predictions.lines().count() as u64, n + 1);
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("backtest.json")).unwrap()).unwrap();
    assert_eq!(report["windows"].as_array().unwrap().len() as u64, n.div_ceil(100));

    let months = json(&windcast(&["--format", "json", "analyze", "--series", s(&hourly), "--station", "T1"]));
    let months = months.as_array().unwrap();
    assert_eq!(months[0]["month"], "2021-03");
    assert!(months.iter().all(|m| m["station"] == "T1" && m["r_ss_24"].as_f64().unwrap() > 0.5));
}

fn write_config(dir: &Path, hourly: &Path, memories: &str) -> PathBuf {
    let config = format!(
        r#"
horizons = [1, 3]
memories = {memories}
designs = ["ss", "zm-zm"]
models = ["linear"]
cutoff = "2021-04-01T00:00:00Z"
output_dir = "{out}"

[[stations]]
id = "T1"
path = "{hourly}"
"#,
        out = s(&dir.join("sweep")),
        hourly = s(hourly),
    );
    let p = dir.join("sweep.toml");
    fs::write(&p, config).unwrap();
    p
}

#[test]
fn sweep_compare_and_exit_codes() {
    let dir = TempDir::new().unwrap();
    let hourly = ingest(dir.path(), 40);
    let config = write_config(dir.path(), &hourly, "[2, 12]");
    let best = json(&windcast(&["--format", "json", "sweep", "--config", s(&config)]));
    assert_eq!(best.as_array().unwrap().len(), 2);
    let results = dir.path().join("sweep");
    for f in ["resolved_config.toml", "sweep.csv", "sweep.json", "locally_best.csv", "globally_best.csv"] {
        assert!(results.join(f).exists(), "{f}");
    }
    let sweep_csv = results.join("sweep.csv");
    let deltas = json(&windcast(&["--format", "json", "compare", "--results", s(&sweep_csv), "--axis", "memory", "--reference", "2"]));
    // reference cells are listed too, with a zero delta
    let deltas = deltas.as_array().unwrap();
    assert_eq!(deltas.len(), 8);
    assert!(deltas.iter().filter(|d| d["memory"] == 2).all(|d| d["delta_nrmse"] == 0.0));
    let global = json(&windcast(&["--format", "json", "compare", "--results", s(&sweep_csv), "--global"]));
    assert_eq!(global.as_array().unwrap().len(), 2);

    // a memory longer than the series fails its cells
    let config = write_config(dir.path(), &hourly, "[2, 5000]");
    let partial = windcast(&["sweep", "--config", s(&config)]);
    assert_eq!(partial.status.code(), Some(3));
    let allowed = windcast(&["sweep", "--config", s(&config), "--allow-partial"]);
    assert_eq!(allowed.status.code(), Some(0));
    let text = fs::read_to_string(results.join("sweep.csv")).unwrap();
    assert!(text.lines().any(|l| l.contains("failed")));
}

#[test]
fn errors_exit_one() {
    let out = windcast(&["train", "--series", "/nonexistent.csv", "-o", "/tmp/never.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = windcast(&["analyze", "--series", "/nonexistent.csv"]);
    assert_eq!(out.status.code(), Some(1));
}
