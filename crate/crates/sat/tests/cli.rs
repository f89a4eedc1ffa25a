use std::path::Path;
use std::process::{Command, Output};

use sat::checkpoint::load_checkpoint;
use sat::jsonl::load_jsonl;

fn sat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sat")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for out in [&a, &b] {
        let o = sat(&["gen", "triangle-count", "--n", "12", "--nodes", "7", "--seed", "4", "--out", path(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(load_jsonl(&a).unwrap().len(), 12);
}

#[test]
fn train_eval_and_dump_attention() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl.gz");
    let run = dir.path().join("run");
    assert!(sat(&["gen", "sbm", "--n", "6", "--blocks", "3,4", "--out", path(&data)]).status.success());
    let o = sat(&[
        "train", "--data", path(&data), "--out", path(&run), "--seed", "2",
        "--set", "num_layers=1", "hidden_dim=8", "num_heads=2", "epochs=2", "batch_size=2", "pe=lappe", "pe_dim=2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let ckpt = load_checkpoint(run.join("model.satckpt")).unwrap();
    assert_eq!(ckpt.config.train.seed, 2);
    assert_eq!(ckpt.config.model.input_dim, 3);
    let history: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("history.json")).unwrap()).unwrap();
    assert_eq!(history["history"]["epochs"].as_array().unwrap().len(), 2);
    assert_eq!(history["config"]["model"]["readout"], "none");

    let ckpt_path = run.join("model.satckpt");
    let o = sat(&["eval", "--data", path(&data), "--checkpoint", path(&ckpt_path), "--split", "all"]);
    assert!(o.status.success());
    let metrics: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(metrics["count"], 6);
    assert_eq!(metrics["per_class_accuracy"].as_array().unwrap().len(), 2);

    let o = sat(&["dump-attention", "--data", path(&data), "--checkpoint", path(&ckpt_path), "--graph-index", "1"]);
    assert!(o.status.success());
    let dump: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let layers = dump["layers"].as_array().unwrap();
    assert_eq!(layers.len(), 2);
    let rows = layers[0]["weights"].as_array().unwrap();
    assert_eq!(rows.len(), 7);
    for row in rows {
        let s: f64 = row.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    let o = sat(&["dump-attention", "--data", path(&data), "--checkpoint", path(&ckpt_path), "--graph-index", "99"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_suites_pass() {
    for suite in ["theorem1", "theorem2", "smoother", "equivariance"] {
        let o = sat(&["verify", "--suite", suite, "--trials", "20", "--seed", "3"]);
        assert!(o.status.success(), "{suite}: {}", String::from_utf8_lossy(&o.stdout));
        let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(report["passed"], true);
    }
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(sat(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(sat(&["verify", "--suite", "nope"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    assert!(sat(&["gen", "cycle-vs-triangles", "--n", "4", "--out", path(&data)]).status.success());
    let out = dir.path().join("run");
    let o = sat(&["train", "--data", path(&data), "--out", path(&out), "--set", "k=many"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("k=many"));
    let o = sat(&["train", "--data", path(&dir.path().join("missing.jsonl")), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(1));
}
