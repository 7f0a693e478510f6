use std::path::Path;
use std::process::{Command, Output};

fn btpnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_btpnn")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small dataset with one categorical column; y depends on x1 and the level.
fn write_data(dir: &Path) -> std::path::PathBuf {
    let mut text = String::from("x1,x2,grp,y\n");
    for i in 0..60 {
        let x1 = (i * 37 % 60) as f64 / 60.0;
        let x2 = (i * 11 % 60) as f64 / 60.0;
        let grp = ["a", "b", "c"][i % 3];
        let y = 2.0 * x1 + if grp == "b" { 1.0 } else { 0.0 } + 0.1 * ((i * 7 % 13) as f64 / 13.0 - 0.5);
        text.push_str(&format!("{x1},{x2},{grp},{y}\n"));
    }
    let path = dir.join("train.csv");
    std::fs::write(&path, text).unwrap();
    path
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{"target": "y", "family": "gaussian", "burn_in": 30, "iterations": 20, "n_chains": 2, "K_max": 10}"#,
    )
    .unwrap();
    path
}

#[test]
fn fit_predict_importance_components_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let config = write_config(dir.path());
    let out = dir.path().join("fit");
    let o = btpnn(&["fit", "--data", s(&data), "--config", s(&config), "--out", s(&out), "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let samples = std::fs::read_to_string(out.join("samples.jsonl")).unwrap();
    assert_eq!(samples.lines().count(), 1 + 2 * 20);
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 2 * 20);
    assert!(trace.starts_with("chain,iteration,K,log_likelihood,sigma2"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"]["name"], "fit");
    assert_eq!(manifest["config"]["seed"], 3);
    assert!(manifest["rerun"].as_str().unwrap().starts_with("btpnn rerun --manifest "));

    let pred = dir.path().join("pred.csv");
    let o = btpnn(&["predict", "--samples", s(&out.join("samples.jsonl")), "--data", s(&data), "--out", s(&pred)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&pred).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "row,mean,lower,upper");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 60);
    assert!(rows.iter().all(|r| r[2] <= r[1] && r[1] <= r[3]));
    assert!(dir.path().join("pred.csv.manifest.json").exists());

    let imp = dir.path().join("imp.csv");
    let o = btpnn(&[
        "importance", "--samples", s(&out.join("samples.jsonl")), "--data", s(&data), "--out", s(&imp), "--normalize",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&imp).unwrap();
    assert!(text.starts_with("set,names,order,score\n"));
    let first: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[3].parse::<f64>().unwrap(), 1.0);
    // indices are 1-based, column names follow the one-hot layout
    assert!(text.lines().skip(1).all(|l| !l.starts_with("0")));

    let comp = dir.path().join("comp.csv");
    let o = btpnn(&["components", "--samples", s(&out.join("samples.jsonl")), "--set", "1", "--out", s(&comp)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&comp).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x1,mean,lower,upper");
    assert_eq!(text.lines().count(), 102);
    let comp3 = dir.path().join("comp3.csv");
    let o = btpnn(&["components", "--samples", s(&out.join("samples.jsonl")), "--set", "1,2,5", "--out", s(&comp3)]);
    assert_eq!(o.status.code(), Some(2));
    let o = btpnn(&[
        "components", "--samples", s(&out.join("samples.jsonl")), "--set", "1,2,5", "--data", s(&data), "--out", s(&comp3),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&comp3).unwrap().lines().count(), 61);

    let again = dir.path().join("again");
    let o = btpnn(&["rerun", "--manifest", s(&out.join("manifest.json")), "--out", s(&again)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(out.join("samples.jsonl")).unwrap(), std::fs::read(again.join("samples.jsonl")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let out = dir.path().join("o");
    // no target anywhere
    assert_eq!(btpnn(&["fit", "--data", s(&data), "--out", s(&out)]).status.code(), Some(2));
    // unknown target column
    let o = btpnn(&["fit", "--data", s(&data), "--target", "nope", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    // bad config key
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"target": "y", "warp": 9}"#).unwrap();
    assert_eq!(btpnn(&["fit", "--data", s(&data), "--config", s(&cfg), "--out", s(&out)]).status.code(), Some(2));
    // unparseable flag
    assert_eq!(btpnn(&["fit", "--data"]).status.code(), Some(2));
    // response outside the family's support
    assert_eq!(
        btpnn(&["fit", "--data", s(&data), "--target", "y", "--family", "bernoulli", "--out", s(&out)]).status.code(),
        Some(2)
    );
    // output directory cannot be created
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let cfg = write_config(dir.path());
    let o = btpnn(&["fit", "--data", s(&data), "--config", s(&cfg), "--out", s(&blocker.join("sub"))]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(btpnn(&["--help"]).status.code(), Some(0));
}

#[test]
fn p_input_sets_selection_weights() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let config = write_config(dir.path());
    let weights = dir.path().join("w.csv");
    std::fs::write(&weights, "index,weight\n1,4\n2,1\n3,1\n4,1\n5,1\n").unwrap();
    let out = dir.path().join("fit");
    let o = btpnn(&[
        "fit", "--data", s(&data), "--config", s(&config), "--out", s(&out), "--p-input", s(&weights),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["omega"], serde_json::json!([4.0, 1.0, 1.0, 1.0, 1.0]));
    std::fs::write(&weights, "9,1.0\n").unwrap();
    let o = btpnn(&[
        "fit", "--data", s(&data), "--config", s(&config), "--out", s(&out), "--p-input", s(&weights),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"function": "f3", "n": 200, "p": 10, "snr": 5, "seed": 2,
            "chain": {"burn_in": 20, "iterations": 20, "seed": 2}, "crps_draws": 50}"#,
    )
    .unwrap();
    let out = dir.path().join("bench");
    let o = btpnn(&["bench", "--spec", s(&spec), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["n_test"], 40);
    assert!(report["rmse"].as_f64().unwrap() > 0.0);
    assert!(report["crps"].as_f64().is_some());
    for f in ["data.csv", "data.truth.json", "samples.jsonl", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let o = btpnn(&["rerun", "--manifest", s(&out.join("manifest.json"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    std::fs::write(&spec, r#"{"function": "f3", "n": 200, "p": 4}"#).unwrap();
    assert_eq!(btpnn(&["bench", "--spec", s(&spec), "--out", s(&out)]).status.code(), Some(2));
}
