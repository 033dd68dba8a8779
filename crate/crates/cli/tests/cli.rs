use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn foagp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_foagp")).args(args).env("FOAGP_THREADS", "1").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = foagp(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_example_writes_split_and_truth_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let manifest = ok(&["simulate", "--example", "1", "--n", "2000", "--seed", "7", "--out", p(&a)]);
    assert_eq!(manifest.lines().count(), 3);
    ok(&["simulate", "--example", "1", "--n", "2000", "--seed", "7", "--out", p(&b)]);
    let train = fs::read_to_string(a.join("data_train.csv")).unwrap();
    assert_eq!(train.lines().count(), 1601);
    assert_eq!(fs::read_to_string(a.join("data_test.csv")).unwrap().lines().count(), 401);
    assert!(train.starts_with("x1,x2,t,y\n"));
    for f in ["data_train.csv", "data_test.csv", "truth.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let truth = json(&a.join("truth.json"));
    assert!((truth["indices"]["f2"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn simulate_grid_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--grid", "--m", "50", "--n", "100", "--seed", "1", "--out", p(dir.path())]);
    let inputs = fs::read_to_string(dir.path().join("inputs.csv")).unwrap();
    assert!(inputs.starts_with("x1,x2\n"));
    assert_eq!(inputs.lines().count(), 51);
    assert_eq!(fs::read_to_string(dir.path().join("positions.csv")).unwrap().lines().count(), 101);
    let resp = fs::read_to_string(dir.path().join("responses.csv")).unwrap();
    assert_eq!(resp.lines().count(), 50);
    assert!(resp.lines().all(|l| l.split(',').count() == 100));
}

#[test]
fn grid_fit_uses_kronecker_path_and_beats_dense() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("grid");
    ok(&["simulate", "--grid", "--m", "30", "--n", "40", "--seed", "2", "--out", p(&data)]);
    let (g, d) = (dir.path().join("g"), dir.path().join("d"));
    let common = ["--restarts", "1", "--max-iter", "15"];
    let mut args = vec!["fit", "--data", p(&data), "--out", p(&g)];
    args.extend(common);
    assert!(ok(&args).contains("path: kronecker"));
    let mut args = vec!["fit", "--data", p(&data), "--out", p(&d), "--force-dense"];
    args.extend(common);
    assert!(ok(&args).contains("path: dense"));
    let time = |dir: &Path| json(&dir.join("fit_log.json"))["report"]["wall_time_secs"].as_f64().unwrap();
    assert!(time(&g) < time(&d), "kronecker {} s vs dense {} s", time(&g), time(&d));
}

#[test]
fn corrupt_csv_exits_with_input_error_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x1,t,y\n0.1,0.2,0.3\n0.4,0.5,0.6\n0.7,abc,0.9\n").unwrap();
    let out = foagp(&["fit", "--data", p(&bad), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv:4"));
    let missing = foagp(&["fit", "--data", p(&dir.path().join("none.csv")), "--out", p(dir.path())]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--example", "2", "--n", "60", "--out", p(dir.path())]);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"restarts": 1, "restart_count": 3}"#).unwrap();
    let out = foagp(&["fit", "--data", p(&dir.path().join("data_train.csv")), "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("restart_count"));
}

#[test]
fn fit_decompose_and_sensitivity_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model");
    ok(&["simulate", "--example", "2", "--n", "250", "--seed", "4", "--out", p(&data)]);
    let truth = data.join("truth.json");
    let fit_out = ok(&[
        "fit",
        "--data",
        p(&data.join("data_train.csv")),
        "--test",
        p(&data.join("data_test.csv")),
        "--restarts",
        "2",
        "--out",
        p(&model),
    ]);
    assert!(fit_out.contains("test_rmse"));
    let log = json(&model.join("fit_log.json"));
    assert_eq!(log["report"]["restarts"].as_array().unwrap().len(), 2);

    let dec = dir.path().join("dec");
    ok(&["decompose", "--model", p(&model), "--x-grid", "1:2:4", "--t-grid", "0.2:2:5", "--out", p(&dec)]);
    let csv = fs::read_to_string(dec.join("effects.csv")).unwrap();
    assert!(csv.starts_with("x1,x2,t,f0,f1,f2,f12,total\n"));
    assert_eq!(csv.lines().count(), 1 + 16 * 5);
    assert_eq!(json(&dec.join("decompose_summary.json"))["sum_identity_ok"], Value::Bool(true));

    let base = dir.path().join("base");
    ok(&["decompose", "--model", p(&model), "--baseline", "hdmr", "--truth", p(&truth), "--out", p(&base)]);
    let summary = json(&base.join("decompose_summary.json"));
    assert!(summary["rmse_vs_truth"]["hdmr"]["f1"].is_number());
    assert!(fs::read_to_string(base.join("effects.csv")).unwrap().lines().next().unwrap().ends_with("hdmr_total"));

    let sens = dir.path().join("sens");
    ok(&["sensitivity", "--model", p(&model), "--truth", p(&truth), "--t-grid", "0.2:2:101", "--out", p(&sens)]);
    let ecv = json(&sens.join("ecv.json"));
    let sum: f64 = ecv["indices"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-12);
    assert!(ecv["truth"]["f1"]["abs_error"].is_number());
    let curves = fs::read_to_string(sens.join("local_curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 102);
}

#[test]
fn benchmark_schema_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = |out: &Path| {
        ok(&["benchmark", "--example", "2", "--sizes", "40,60", "--repeats", "2", "--restarts", "1", "--out", p(out)]);
    };
    args(&a);
    args(&b);
    let table = fs::read_to_string(a.join("benchmark.csv")).unwrap();
    assert!(table.starts_with("size,repeat,S1,S2,S12,rmse\n"));
    assert_eq!(table.lines().count(), 5);
    assert_eq!(table, fs::read_to_string(b.join("benchmark.csv")).unwrap());
    assert_eq!(fs::read_to_string(a.join("benchmark_summary.csv")).unwrap().lines().count(), 3);
}

#[test]
fn convert_round_trips_between_formats() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid");
    ok(&["simulate", "--grid", "--m", "5", "--n", "4", "--out", p(&grid)]);
    let long = dir.path().join("long.csv");
    ok(&["convert", "--input", p(&grid), "--output", p(&long)]);
    assert_eq!(fs::read_to_string(&long).unwrap().lines().count(), 21);
    let back = dir.path().join("back");
    ok(&["convert", "--input", p(&long), "--output", p(&back)]);
    for f in ["inputs.csv", "positions.csv", "responses.csv"] {
        assert_eq!(fs::read(grid.join(f)).unwrap(), fs::read(back.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn example1_fit_has_small_test_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--example", "1", "--n", "2000", "--seed", "11", "--out", p(dir.path())]);
    ok(&[
        "fit",
        "--data",
        p(&dir.path().join("data_train.csv")),
        "--test",
        p(&dir.path().join("data_test.csv")),
        "--restarts",
        "1",
        "--out",
        p(dir.path()),
    ]);
    let rmse = json(&dir.path().join("fit_log.json"))["test_rmse"].as_f64().unwrap();
    assert!(rmse <= 0.3, "test RMSE {rmse}");
}
