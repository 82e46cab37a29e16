use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fedpop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedpop")).args(args).output().unwrap()
}

fn small_config(dir: &Path, method: &str) -> String {
    let path = dir.join(format!("{method}.json"));
    let config = serde_json::json!({
        "dataset": { "synthetic": { "num_examples": 300, "num_features": 4,
                                    "num_classes": 3, "class_separation": 3.0 } },
        "partition": { "scheme": "iid", "num_clients": 6 },
        "model": "logistic",
        "budget": { "total_rounds": 40, "rounds_per_config": 10, "clients_per_round": 3 },
        "tuner": { "method": method },
        "seeds": [1, 2],
        "output_dir": dir.join(format!("out_{method}")),
    });
    fs::write(&path, config.to_string()).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn run_writes_reports_and_report_reprints_them() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path(), "fedpop_rs");
    let out = fedpop(&["run", &config]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("out_fedpop_rs");
    for f in ["summary.json", "trace.csv", "config_echo.json"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let printed = String::from_utf8(out.stdout).unwrap();
    assert!(!printed.is_empty());

    let again = fedpop(&["report", dir.to_str().unwrap()]);
    assert!(again.status.success());
    assert_eq!(String::from_utf8(again.stdout).unwrap(), printed);
}

#[test]
fn seed_and_output_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path(), "rs");
    let elsewhere = tmp.path().join("elsewhere");
    let out = fedpop(&["run", &config, "--seeds", "3", "--out", elsewhere.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(elsewhere.join("summary.json")).unwrap()).unwrap();
    let seeds: Vec<u64> = summary["seeds"].as_array().unwrap().iter().map(|s| s["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, [3]);
    assert!(!tmp.path().join("out_rs").exists());
}

#[test]
fn bad_config_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    fs::write(&path, r#"{ "dataset": 1, "bogus": true }"#).unwrap();
    let out = fedpop(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn missing_report_dir_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fedpop(&["report", tmp.path().join("nothing").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}
