use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn robustfit(args: &[&str], cache: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_robustfit"))
        .args(args)
        .env("ROBUSTFIT_TABLE_CACHE", cache)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "robustfit {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

fn generate(dir: &Path, cache: &Path, config: &str, name: &str) -> std::path::PathBuf {
    let cfg = dir.join(format!("{name}.json"));
    write(&cfg, config);
    let out = dir.join(name);
    robustfit(&["generate", "--config", s(&cfg), "--out", s(&out)], cache);
    out
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|r| r.unwrap()).collect()
}

fn headers(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(String::from).collect()
}

#[test]
fn generate_is_byte_deterministic_and_counts_outliers() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let cfg = r#"{"version": 1, "n_points": 100, "seed": 7, "outlier_fraction": 0.4}"#;
    let a = generate(tmp.path(), &cache, cfg, "a");
    let b = generate(tmp.path(), &cache, cfg, "b");
    let files = ["source.ply", "target.ply", "correspondences.csv", "truth_pose.json", "metadata.json"];
    for f in files {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let meta: Value = serde_json::from_str(&fs::read_to_string(a.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["outlier_count"], 40);
    assert_eq!(meta["outlier_source_indices"].as_array().unwrap().len(), 40);
    assert_eq!(meta["seed"], 7);
    assert_eq!(meta["noise_sigma"], 0.005);
    assert_eq!(csv_rows(&a.join("correspondences.csv")).len(), 100);
    assert_eq!(headers(&a.join("correspondences.csv")), ["source_index", "target_index"]);

    let reseeded = tmp.path().join("c");
    robustfit(
        &["generate", "--config", s(&tmp.path().join("a.json")), "--out", s(&reseeded), "--seed", "8"],
        &cache,
    );
    assert_ne!(fs::read(a.join("source.ply")).unwrap(), fs::read(reseeded.join("source.ply")).unwrap());
}

#[test]
fn generate_reports_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    write(&cfg, "{\"version\": 1,\n \"n_pointz\": 100}");
    let out = Command::new(env!("CARGO_BIN_EXE_robustfit"))
        .args(["generate", "--config", s(&cfg), "--out", s(&tmp.path().join("d"))])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("n_pointz") && err.contains("bad.json"), "{err}");
}

#[test]
fn register_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let clean = generate(
        tmp.path(),
        &cache,
        r#"{"version": 1, "n_points": 200, "seed": 3, "noise_sigma": 0.0}"#,
        "clean",
    );
    let report = tmp.path().join("lsq.json");
    let stdout = robustfit(
        &["register", "--data", s(&clean), "--method", "lsq", "--out", s(&report)],
        &cache,
    );
    assert!(String::from_utf8_lossy(&stdout.stdout).contains("rmse"));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(r["result"]["rmse"].as_f64().unwrap() < 1e-6);

    let noisy = generate(
        tmp.path(),
        &cache,
        r#"{"version": 1, "n_points": 200, "seed": 4, "outlier_fraction": 0.4}"#,
        "noisy",
    );
    let report = tmp.path().join("rko.json");
    robustfit(
        &["register", "--data", s(&noisy), "--method", "rko", "--scale", "0.05", "--out", s(&report)],
        &cache,
    );
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["settings"]["residual_scale"], 0.05);
    assert_eq!(r["settings"]["c_grid"], serde_json::json!([1.0]));
    let trace = r["trace"].as_array().unwrap();
    assert_eq!(trace.len(), r["result"]["iterations"].as_u64().unwrap() as usize + 1);
    assert!(trace.iter().all(|t| t["alpha"].is_number() && t["c"] == 1.0));

    let report = tmp.path().join("star.json");
    robustfit(
        &["register", "--data", s(&noisy), "--method", "srko-star", "--out", s(&report)],
        &cache,
    );
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["trace"][0]["iteration"], 0);
    assert_eq!(r["trace"][0]["alpha"], 2.0);
    assert_eq!(r["trace"][0]["c"], 1.0);
    assert_eq!(r["settings"]["c_grid"].as_array().unwrap().len(), 40);

    let report = tmp.path().join("welsch.json");
    robustfit(
        &[
            "register", "--data", s(&noisy), "--method", "srko", "--alpha-grid", "-inf,-2,0,2",
            "--c-grid", "0.1,1", "--out", s(&report),
        ],
        &cache,
    );
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["settings"]["alpha_grid"][0], "-inf");
}

#[test]
fn register_rejects_unknown_method_and_missing_files() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_robustfit"))
            .args(args)
            .env("ROBUSTFIT_TABLE_CACHE", tmp.path())
            .output()
            .unwrap()
    };
    let missing = tmp.path().join("nothing");
    let out = run(&["register", "--data", s(&missing), "--method", "ransac"]);
    assert!(!out.status.success());
    let out = run(&["register", "--data", s(&missing), "--method", "gnc"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("source.ply"));
}

const ROW_COLUMNS: [&str; 16] = [
    "trial", "seed", "method", "scale", "alpha_final", "alpha_min", "alpha_max", "c_final",
    "c_min", "c_max", "mu_final", "rmse", "iterations", "converged", "wall_time_ms", "error",
];

fn without_timing(path: &Path) -> Vec<Vec<String>> {
    let cols = headers(path);
    let t = cols.iter().position(|c| c == "wall_time_ms").unwrap();
    csv_rows(path)
        .iter()
        .map(|r| r.iter().enumerate().filter(|&(i, _)| i != t).map(|(_, v)| v.to_string()).collect())
        .collect()
}

#[test]
fn benchmark_cardinality_schema_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let suite = tmp.path().join("suite.json");
    write(
        &suite,
        r#"{
            "version": 1,
            "trials": 25,
            "base_seed": 100,
            "instance": {"n_points": 150},
            "methods": ["huber", "rko", "srko-star", "gnc"],
            "scales": [1.0]
        }"#,
    );
    let out = tmp.path().join("res.csv");
    let plots = tmp.path().join("plots");
    robustfit(
        &["benchmark", "--suite", s(&suite), "--out", s(&out), "--plot-dir", s(&plots)],
        &cache,
    );
    assert_eq!(headers(&out), ROW_COLUMNS);
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 100);
    let agg_path = tmp.path().join("res_aggregate.csv");
    assert_eq!(
        headers(&agg_path),
        ["method", "scale", "trials", "failures", "mean_rmse", "mean_iterations"]
    );
    let agg = csv_rows(&agg_path);
    assert_eq!(agg.len(), 4);

    // Ordered by trial, then method as listed.
    let methods = ["huber", "rko", "srko-star", "gnc"];
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0].parse::<usize>().unwrap(), i / 4);
        assert_eq!(r[1].parse::<u64>().unwrap(), 100 + (i / 4) as u64);
        assert_eq!(&r[2], methods[i % 4]);
        assert_eq!(&r[15], "", "row {i} failed");
    }

    // Aggregates are recomputable from the rows.
    let mut means = std::collections::HashMap::new();
    for a in &agg {
        let mean: f64 = a[4].parse().unwrap();
        let rmses: Vec<f64> = rows
            .iter()
            .filter(|r| r[2] == a[0])
            .map(|r| r[11].parse::<f64>().unwrap())
            .collect();
        let hand = rmses.iter().sum::<f64>() / rmses.len() as f64;
        assert!((mean - hand).abs() <= 1e-12 * hand.max(1e-300), "{}", &a[0]);
        means.insert(a[0].to_string(), mean);
    }
    // Outlier-free suite: the learned kernel keeps up with the baseline.
    assert!(means["srko-star"] <= 1.5 * means["gnc"], "{means:?}");

    let trace = plots.join("learned_kernel.csv");
    assert_eq!(headers(&trace), ["trial", "method", "scale", "iteration", "alpha", "c", "mu"]);
    assert_eq!(csv_rows(&plots.join("rmse_per_trial.csv")).len(), 100);
    let settings: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("res_settings.json")).unwrap()).unwrap();
    assert_eq!(settings["settings"].as_array().unwrap().len(), 4);
    assert_eq!(settings["seeds"].as_array().unwrap().len(), 25);

    let again = tmp.path().join("again.csv");
    let plots2 = tmp.path().join("plots2");
    robustfit(
        &["benchmark", "--suite", s(&suite), "--out", s(&again), "--plot-dir", s(&plots2)],
        &cache,
    );
    assert_eq!(without_timing(&out), without_timing(&again));
    assert_eq!(fs::read(&agg_path).unwrap(), fs::read(tmp.path().join("again_aggregate.csv")).unwrap());
    assert_eq!(fs::read(&trace).unwrap(), fs::read(plots2.join("learned_kernel.csv")).unwrap());
}

#[test]
fn benchmark_records_failed_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = tmp.path().join("suite.json");
    // An off-grid initial scale makes every srko cell fail; gnc cells still run.
    write(
        &suite,
        r#"{"version": 1, "seeds": [1, 2], "instance": {"n_points": 50},
            "methods": ["gnc", "srko"], "scales": [1.0, 0.5],
            "options": {"c_grid": "1.5:0.5:3"}}"#,
    );
    let out = tmp.path().join("res.csv");
    let res = Command::new(env!("CARGO_BIN_EXE_robustfit"))
        .args(["benchmark", "--suite", s(&suite), "--out", s(&out)])
        .env("ROBUSTFIT_TABLE_CACHE", tmp.path())
        .output()
        .unwrap();
    assert!(!res.status.success(), "settings are validated before any cell runs");

    // Failures inside a cell are recorded in-row and the run continues.
    write(
        &suite,
        r#"{"version": 1, "seeds": [1, 2], "instance": {"n_points": 50, "noise_sigma": -1},
            "methods": ["gnc", "lsq"], "scales": [1.0, 0.5]}"#,
    );
    let stdout = robustfit(&["benchmark", "--suite", s(&suite), "--out", s(&out)], tmp.path());
    assert!(String::from_utf8_lossy(&stdout.stdout).contains("8 of 8 cells failed"));
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r[15].contains("noise_sigma") && r[11].is_empty()));
    let agg = csv_rows(&tmp.path().join("res_aggregate.csv"));
    assert!(agg.iter().all(|a| &a[3] == "2" && a[4].is_empty()));
}

#[test]
fn table_export() {
    let tmp = tempfile::tempdir().unwrap();
    let single = tmp.path().join("one.csv");
    robustfit(
        &["table", "--alpha-grid", "2", "--c-grid", "1", "--tau", "10", "--out", s(&single)],
        tmp.path(),
    );
    let text = fs::read_to_string(&single).unwrap();
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(lines.len(), 2);
    let log_z: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
    assert!((log_z - 0.91894).abs() < 1e-5);

    let full = tmp.path().join("full.csv");
    let again = tmp.path().join("again.csv");
    robustfit(&["table", "--out", s(&full)], tmp.path());
    robustfit(
        &["table", "--alpha-grid", "-4:0.25:2", "--c-grid", "0.05:0.05:2", "--out", s(&again)],
        tmp.path(),
    );
    let text = fs::read_to_string(&full).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1001);
    assert_eq!(fs::read(&full).unwrap(), fs::read(&again).unwrap());

    let table = robustfit::partition::PartitionTable::read_csv(fs::File::open(&full).unwrap()).unwrap();
    assert_eq!(table.shape(), (25, 40));
}
