use certcirc::circuit::CircuitFile;
use certcirc::experiment::{
    batch_predicate, make_batches, run_experiment, setup, Criterion, ExperimentConfig,
};
use certcirc::verify::{verify, Budget, Status};

fn config(methods: &str, extra: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(&format!(
        r#"
name = "it"
seed = 3
parallel = false
{extra}
[model]
builder = "trained_mlp"
seed = 3
dims = [2, 8, 2]
epochs = 300
[batches]
count = 4
k = 2
[property]
delta = 1.0
eps_in = 0.05
{methods}
"#
    ))
    .unwrap()
}

const FULL: &str = r#"
[[methods]]
name = "full"
algorithm = "none"
predicate = "input_robust"
"#;

const BOTH: &str = r#"
[[methods]]
name = "provable"
algorithm = "greedy"
predicate = "input_robust"
[[methods]]
name = "sampling"
algorithm = "binary_search"
predicate = "sampling"
"#;

#[test]
fn full_model_is_robust_and_full_size() {
    let cfg = config(FULL, "");
    let r = run_experiment(&cfg).unwrap();
    let s = r.summary("full").unwrap();
    assert_eq!(s.robust_pct, 100.0);
    assert_eq!(s.size_mean, 8.0);
}

#[test]
fn runs_are_reproducible() {
    let cfg = config(BOTH, "");
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    let key = |r: &certcirc::experiment::RunReport| {
        r.records
            .iter()
            .map(|x| (x.batch, x.method.clone(), x.circuit.clone(), x.robust))
            .collect::<Vec<_>>()
    };
    assert_eq!(key(&a), key(&b));
    assert_eq!(a.excluded, b.excluded);
}

// every "robust" record is backed by a saved certified verdict that a fresh
// verification of the saved circuit reproduces
#[test]
fn saved_circuits_reverify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(BOTH, &format!("output_dir = {:?}", dir.path()));
    let r = run_experiment(&cfg).unwrap();
    for f in [
        "report.json",
        "table.txt",
        "size_over_time.tsv",
        "network.json",
        "config.toml",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let s = setup(&cfg).unwrap();
    let batches = make_batches(&s.net, &s.pool, &cfg.batches, cfg.seed).unwrap();
    for rec in r
        .records
        .iter()
        .filter(|x| x.robust.is_some_and(|o| o.is_true()))
    {
        assert!(rec.verdicts.iter().all(|v| v.status == Status::Certified));
        let path = dir
            .path()
            .join("circuits")
            .join(format!("batch{:03}_{}.json", rec.batch, rec.method));
        let file: CircuitFile =
            serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        let c = file.circuit_for(&s.net).unwrap();
        let b = &batches[rec.batch];
        let p = batch_predicate(
            &s.net,
            b,
            Criterion::InputRobust,
            &file.patching,
            &cfg.property,
            Budget::unlimited(),
        )
        .unwrap();
        for q in p.queries(&c).unwrap() {
            assert!(verify(&q, &Budget::unlimited()).unwrap().is_certified());
        }
    }
}

#[test]
fn bad_configs_are_rejected() {
    assert!(ExperimentConfig::from_toml("name = 1").is_err());
    let no_methods = "name = \"x\"\nseed = 0\nmethods = []\n[model]\nbuilder = \"xor_toy\"\n";
    assert!(ExperimentConfig::from_toml(no_methods).is_err());
    let unknown = format!("{}\n[[methods]]\nname = \"a\"\nalgorithm = \"greedy\"\npredicate = \"sampling\"\nbogus = 1\n", "name = \"x\"\nseed = 0\n[model]\nbuilder = \"xor_toy\"");
    assert!(ExperimentConfig::from_toml(&unknown).is_err());
}
