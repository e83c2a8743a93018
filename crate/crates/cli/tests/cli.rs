use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_certcirc"));
    c.env_remove("CERTCIRC_TIMEOUT")
        .env_remove("CERTCIRC_THREADS");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(out: Output) -> Value {
    serde_json::from_str(&ok(out)).unwrap()
}

fn build(dir: &Path, args: &[&str]) -> PathBuf {
    let p = dir.join("net.json");
    ok(bin()
        .arg("build-model")
        .args(args)
        .arg("-o")
        .arg(&p)
        .output()
        .unwrap());
    p
}

#[test]
fn xor_discover_then_classify() {
    let dir = tempfile::tempdir().unwrap();
    let net = build(dir.path(), &["--builder", "xor_toy"]);
    let pred = configs().join("predicates/xor_exact.json");
    let circ = dir.path().join("c.json");
    let d = json(
        bin()
            .args(["discover", "--net"])
            .arg(&net)
            .arg("--predicate")
            .arg(&pred)
            .arg("-o")
            .arg(&circ)
            .output()
            .unwrap(),
    );
    assert_eq!(d["size"], 5);
    assert_eq!(d["evals"], 6);
    let r = json(
        bin()
            .args(["oracle", "classify", "--net"])
            .arg(&net)
            .arg("--predicate")
            .arg(&pred)
            .arg("--circuit")
            .arg(&circ)
            .output()
            .unwrap(),
    );
    assert_eq!(r["local"], true);
    assert_eq!(r["subset"], false);
    let m = json(
        bin()
            .args(["oracle", "monotone", "--net"])
            .arg(&net)
            .arg("--predicate")
            .arg(&pred)
            .output()
            .unwrap(),
    );
    assert_eq!(m["monotone"], false);
}

#[test]
fn synthetic_mhs_is_exact() {
    let pred = configs().join("predicates/synthetic.toml");
    let r = json(
        bin()
            .args(["mhs-discover", "--t-max", "6", "--predicate"])
            .arg(&pred)
            .output()
            .unwrap(),
    );
    assert_eq!(r["size"], 2);
    assert_eq!(r["status"], "exact");
    assert_eq!(r["monotonicity"], "guaranteed");
}

#[test]
fn counterexample_verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let net = build(dir.path(), &["--builder", "counterexample", "--m", "1"]);
    let pred = configs().join("predicates/counterexample.json");
    let full = dir.path().join("full.json");
    // the separation example order (p, v3, q, v4)
    json(
        bin()
            .args(["discover", "--order", "L1.0,L1.2,L1.1,L2.0", "--net"])
            .arg(&net)
            .arg("--predicate")
            .arg(&pred)
            .arg("-o")
            .arg(&full)
            .output()
            .unwrap(),
    );
    let out = bin()
        .args(["verify", "--net"])
        .arg(&net)
        .arg("--predicate")
        .arg(&pred)
        .arg("--circuit")
        .arg(&full)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    // the empty circuit is not faithful: falsified
    let empty = dir.path().join("empty.json");
    let mut file: Value = serde_json::from_str(&std::fs::read_to_string(&full).unwrap()).unwrap();
    file["members"] = Value::Array(vec![]);
    std::fs::write(&empty, file.to_string()).unwrap();
    let out = bin()
        .args(["verify", "--net"])
        .arg(&net)
        .arg("--predicate")
        .arg(&pred)
        .arg("--circuit")
        .arg(&empty)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let range = json(
        bin()
            .args(["oracle", "range", "--lo", "0", "--hi", "1", "--net"])
            .arg(&net)
            .output()
            .unwrap(),
    );
    assert_eq!(range.as_array().unwrap().len(), 1);
}

#[test]
fn evaluate_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        r#"
name = "cli"
seed = 2
[model]
builder = "trained_mlp"
seed = 2
dims = [2, 8, 2]
epochs = 200
[batches]
count = 3
k = 2
[[methods]]
name = "provable"
algorithm = "greedy"
predicate = "input_robust"
"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let table = ok(bin()
        .env("CERTCIRC_THREADS", "1")
        .args(["evaluate", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&out)
        .output()
        .unwrap());
    assert!(table.contains("provable"));
    let again = ok(bin().args(["report", "--dir"]).arg(&out).output().unwrap());
    assert_eq!(table, again);
    let report = json(
        bin()
            .args(["report", "--json", "--dir"])
            .arg(&out)
            .output()
            .unwrap(),
    );
    assert_eq!(report["records"].as_array().unwrap().len(), 3);
}

#[test]
fn train_reports_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    let stats = json(
        bin()
            .args([
                "train", "--dims", "2,8,2", "--epochs", "300", "--seed", "4", "-o",
            ])
            .arg(&p)
            .output()
            .unwrap(),
    );
    assert!(stats["test_accuracy"].as_f64().unwrap() > 0.9);
    assert!(p.exists());
}

#[test]
fn bad_environment_is_reported() {
    let pred = configs().join("predicates/synthetic.toml");
    for (var, val) in [
        ("CERTCIRC_TIMEOUT", "soon"),
        ("CERTCIRC_TIMEOUT", "-1"),
        ("CERTCIRC_THREADS", "0"),
    ] {
        let out = bin()
            .env(var, val)
            .args(["oracle", "monotone", "--predicate"])
            .arg(&pred)
            .output()
            .unwrap();
        assert!(!out.status.success());
        assert!(String::from_utf8_lossy(&out.stderr).contains(var));
    }
}

#[test]
fn unknown_builder_and_missing_files_fail_cleanly() {
    let out = bin()
        .args(["build-model", "--builder", "resnet"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = bin()
        .args(["oracle", "monotone", "--predicate", "/nonexistent.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonexistent"));
}

#[test]
fn shipped_configs_parse() {
    for f in ["table1.toml", "table2.toml", "minimality.toml"] {
        certcirc::experiment::ExperimentConfig::load(&configs().join(f)).unwrap();
    }
}
