use std::path::{Path, PathBuf};
use std::process::Command;

use clap::Parser;
use structprune::cli::{run, Cli};

fn models() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("models")
}

fn bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_structprune")).args(args).output().unwrap()
}

fn run_args(args: &[&str]) -> structprune::Result<String> {
    let mut full = vec!["structprune"];
    full.extend_from_slice(args);
    run(&Cli::try_parse_from(full).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.json");
    let missing = bin(&["prune", "--model", "no/such/model.json", "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("no/such/model.json"));

    let mlp = models().join("mlp.json");
    let strategy = bin(&["prune", "--model", s(&mlp), "--out", s(&out), "--strategy", "magic"]);
    assert_eq!(strategy.status.code(), Some(2));
    let mode = bin(&["prune", "--model", s(&mlp), "--out", s(&out), "--mode", "greedy"]);
    assert_eq!(mode.status.code(), Some(2));
    let ratio = bin(&["prune", "--model", s(&mlp), "--out", s(&out), "--ratio", "1.5"]);
    assert_eq!(ratio.status.code(), Some(2));

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\"alpha\": 4, \"typo\": 1}").unwrap();
    let bad = bin(&["train", "--model", s(&mlp), "--out", s(&out), "--config", s(&cfg)]);
    assert_eq!(bad.status.code(), Some(2));
    std::fs::write(&cfg, "{\"alpha\": -1}").unwrap();
    assert_eq!(bin(&["train", "--model", s(&mlp), "--out", s(&out), "--config", s(&cfg)]).status.code(), Some(2));

    assert_eq!(bin(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn invalid_model_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let src = models();
    for ext in ["json", "bin"] {
        std::fs::copy(src.join(format!("mlp.{ext}")), dir.path().join(format!("mlp.{ext}"))).unwrap();
    }
    let path = dir.path().join("mlp.json");
    let text = std::fs::read_to_string(&path).unwrap();
    // Feed the head back into the second layer: a cycle.
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["edges"].as_array_mut().unwrap().push(serde_json::json!({"from": "fc3", "to": "relu1"}));
    std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    let out = bin(&["inspect", "--model", s(&path), "--out", s(&dir.path().join("i"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn inspect_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_args(&["inspect", "--model", s(&models().join("resnet.json")), "--out", s(dir.path())]).unwrap();
    assert!(report.contains("b1_conv2.out"));
    for f in ["depgraph.csv", "grouping.csv", "groups.txt", "importance.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(dir.path().join("groups.txt")).unwrap(), report);
}

#[test]
fn train_then_prune_with_saved_plan() {
    let dir = tempfile::tempdir().unwrap();
    let trained = dir.path().join("mlp_sparse.json");
    run_args(&["train", "--model", s(&models().join("mlp.json")), "--out", s(&trained), "--epochs", "2", "--seed", "3"]).unwrap();
    for f in ["mlp_sparse.bin", "mlp_sparse.trace.csv", "mlp_sparse.hist.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let pruned = dir.path().join("small.json");
    let text = run_args(&["prune", "--model", s(&trained), "--out", s(&pruned), "--mode", "learned", "--ratio", "0.5"]).unwrap();
    assert!(text.contains("speed up"));
    let again = dir.path().join("again.json");
    let plan = dir.path().join("small.plan.json");
    run_args(&["prune", "--model", s(&trained), "--out", s(&again), "--plan", s(&plan)]).unwrap();
    assert_eq!(std::fs::read(dir.path().join("small.bin")).unwrap(), std::fs::read(dir.path().join("again.bin")).unwrap());

    // A plan for another network is refused.
    let other = dir.path().join("other.json");
    let err = run_args(&["prune", "--model", s(&models().join("mlp2.json")), "--out", s(&other), "--plan", s(&plan)]).unwrap_err();
    assert!(matches!(err, structprune::Error::Plan(_)));
}

#[test]
fn reports_are_deterministic() {
    let read = |dir: &Path| -> Vec<Vec<u8>> {
        let mut names: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        names.iter().map(|p| std::fs::read(p).unwrap()).collect()
    };
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("t.json");
        run_args(&["train", "--model", s(&models().join("resnet.json")), "--out", s(&t), "--epochs", "1", "--samples", "64"]).unwrap();
        run_args(&["prune", "--model", s(&t), "--out", s(&dir.path().join("p.json")), "--mode", "learned", "--seed", "1"]).unwrap();
        run_args(&["prune", "--model", s(&t), "--out", s(&dir.path().join("r.json")), "--strategy", "random", "--seed", "1"]).unwrap();
        runs.push(read(dir.path()));
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn zoo_reproduces_bundled_models() {
    let dir = tempfile::tempdir().unwrap();
    run_args(&["zoo", "--out", s(dir.path())]).unwrap();
    for name in structprune::zoo::MODEL_NAMES {
        for ext in ["json", "bin"] {
            let f = format!("{name}.{ext}");
            assert_eq!(std::fs::read(dir.path().join(&f)).unwrap(), std::fs::read(models().join(&f)).unwrap(), "{f}");
        }
    }
}
