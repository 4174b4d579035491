use std::path::Path;
use std::process::Command;

fn watter(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_watter")).current_dir(dir).args(args).env("RUST_LOG", "warn").output().unwrap();
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn synth_simulate_fit_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.json"), r#"{"workers": 40, "grid_cells": 4}"#).unwrap();
    watter(d, &["synth", "--orders", "200", "--duration-s", "600", "--seed", "2", "--out", "o.csv"]);
    watter(d, &["simulate", "--orders", "o.csv", "--config", "c.json", "--strategy", "online", "--out", "r.json", "--log", "l.csv"]);
    watter(d, &["fit-gmm", "--log", "l.csv", "--k-max", "3", "--out", "g.json"]);
    watter(d, &["simulate", "--orders", "o.csv", "--config", "c.json", "--strategy", "expect", "--gmm", "g.json", "--out", "r2.json", "--log", "l2.csv"]);

    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["orders"], 200);
    assert!(report.get("timing").is_none());
    let json: serde_json::Value = serde_json::from_str(&watter(d, &["report", "--logs", "l.csv", "--format", "json"])).unwrap();
    assert_eq!(json["runs"][0]["report"], report);

    let csv = watter(d, &["report", "--logs", "l.csv", "l2.csv", "--format", "csv"]);
    assert!(csv.starts_with("log,metric,value\n"));
    assert!(csv.contains("l2.csv,dispatch_threshold,"));
    assert!(csv.contains("log,mean_response_s,mean_detour_s,response_share,detour_share"));
}

#[test]
fn train_value_writes_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.json"), r#"{"workers": 30, "grid_cells": 3}"#).unwrap();
    std::fs::write(
        d.join("t.json"),
        r#"{"epochs": 2, "warm_epochs": 1, "hidden": [8], "batch_size": 16, "updates_per_epoch": 3}"#,
    )
    .unwrap();
    watter(d, &["synth", "--orders", "120", "--duration-s", "300", "--out", "o.csv"]);
    watter(d, &["simulate", "--orders", "o.csv", "--config", "c.json", "--strategy", "online", "--out", "r.json", "--log", "l.csv"]);
    watter(d, &["fit-gmm", "--log", "l.csv", "--out", "g.json"]);
    watter(d, &[
        "train-value", "--orders", "o.csv", "--gmm", "g.json", "--config", "c.json", "--train-config", "t.json", "--out", "net.bin",
        "--history", "h.json",
    ]);
    let history: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("h.json")).unwrap()).unwrap();
    assert_eq!(history.as_array().unwrap().len(), 2);
    watter(d, &["simulate", "--orders", "o.csv", "--config", "c.json", "--strategy", "expect", "--net", "net.bin", "--out", "r2.json"]);
}

#[test]
fn expect_without_a_source_fails() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    watter(d, &["synth", "--orders", "20", "--duration-s", "60", "--out", "o.csv"]);
    let out = Command::new(env!("CARGO_BIN_EXE_watter"))
        .current_dir(d)
        .args(["simulate", "--orders", "o.csv", "--strategy", "expect", "--out", "r.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--gmm or --net"));
}
