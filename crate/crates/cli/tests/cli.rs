use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gesture(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gesture")).args(args).output().expect("run gesture")
}

fn ok(args: &[&str]) -> Vec<Value> {
    let out = gesture(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn synth_writes_requested_count_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "d.jsonl");
    let lines = ok(&["synth", "--per-class", "300", "--seed", "42", "--out", &out]);
    assert_eq!(lines[0]["command"], "synth");
    assert_eq!(lines[0]["config"]["noise_std"], 0.01);
    assert_eq!(lines[1]["sequences"], 900);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 900);
}

#[test]
fn end_to_end_small() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (raw, train, test) = (p(d, "d.jsonl"), p(d, "train.jsonl"), p(d, "test.jsonl"));
    let (atrain, atest) = (p(d, "atrain.jsonl"), p(d, "atest.jsonl"));
    ok(&["synth", "--per-class", "5", "--seed", "3", "--out", &raw]);
    let s = ok(&["split", "--in", &raw, "--train-out", &train, "--test-out", &test, "--test-frac", "0.2"]);
    assert_eq!((s[1]["train"].as_u64(), s[1]["test"].as_u64()), (Some(12), Some(3)));
    let a = ok(&["augment", "--in", &train, "--out", &atrain, "--pelt-penalty", "auto"]);
    assert!(a[1]["output"].as_u64().unwrap() > 12);
    ok(&["augment", "--in", &test, "--out", &atest, "--pelt-penalty", "0.5"]);

    let prep = p(d, "prep");
    ok(&["preprocess", "--train", &atrain, "--test", &atest, "--out-dir", &prep]);
    for f in ["train.jsonl", "test.jsonl", "standardizer.json", "train_inputs.jsonl", "test_inputs.jsonl"] {
        assert!(Path::new(&prep).join(f).exists(), "{f}");
    }
    let first: Value = serde_json::from_str(
        std::fs::read_to_string(Path::new(&prep).join("train_inputs.jsonl")).unwrap().lines().next().unwrap(),
    )
    .unwrap();
    assert_eq!(first["values"].as_array().unwrap().len(), 480);

    let (m1, m2) = (p(d, "m1.bin"), p(d, "m2.bin"));
    let std_path = p(d, "prep/standardizer.json");
    let data = p(d, "prep/train.jsonl");
    let train_args = |out: &str| {
        vec![
            "train",
            "--data",
            &data,
            "--cell",
            "gru",
            "--hidden",
            "3",
            "--epochs",
            "2",
            "--batch",
            "16",
            "--seed",
            "7",
            "--standardizer",
            &std_path,
            "--out",
        ]
        .into_iter()
        .map(String::from)
        .chain([out.to_string()])
        .collect::<Vec<_>>()
    };
    let lines = ok(&train_args(&m1).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(lines[0]["config"]["validation_frac"], 0.1);
    let epochs: Vec<_> = lines.iter().filter(|l| l.get("epoch").is_some()).collect();
    assert_eq!(epochs.len(), 2);
    assert!(epochs[0]["val_acc"].is_number());
    ok(&train_args(&m2).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());

    let e = ok(&["eval", "--model", &m1, "--data", &atest, "--raw-test", &test]);
    let report = &e[1];
    assert_eq!(report["raw_test"]["total"], 3);
    let confusion = report["augmented_test"]["confusion"].as_array().unwrap();
    let total: u64 = confusion.iter().flat_map(|r| r.as_array().unwrap()).map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(report["augmented_test"]["total"].as_u64(), Some(total));

    let r = ok(&["replay", "--model", &m1, "--data", &test, "--warm-start"]);
    let events = &r[1..];
    assert!(!events.is_empty());
    for ev in events {
        assert_eq!(ev["sample_index"].as_u64().unwrap() % 15, 0);
        let probs = &ev["probs"];
        let sum = probs["nod"].as_f64().unwrap() + probs["shake"].as_f64().unwrap() + probs["other"].as_f64().unwrap();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    let g = ok(&[
        "grid", "--data", &data, "--cells", "gru,lstm", "--hidden", "2,3", "--folds", "2", "--epochs", "1", "--batch",
        "32",
    ]);
    let summary = g.last().unwrap();
    let ranked = summary["ranked"].as_array().unwrap();
    assert_eq!(ranked.len(), 4);
    let accs: Vec<f64> = ranked.iter().map(|r| r["mean_accuracy"].as_f64().unwrap()).collect();
    assert!(accs.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(summary["best"], ranked[0]);
}

#[test]
fn failures_exit_nonzero_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let missing = p(dir.path(), "missing.jsonl");
    let out = p(dir.path(), "out.jsonl");
    for args in [
        vec!["augment", "--in", missing.as_str(), "--out", out.as_str()],
        vec!["serve", "--model", missing.as_str()],
        vec!["augment", "--in", missing.as_str(), "--out", out.as_str(), "--pelt-penalty", "loud"],
        vec!["split", "--in", missing.as_str(), "--train-out", "a", "--test-out", "b", "--test-frac", "1.5"],
        vec!["synth", "--out", out.as_str(), "--bogus"],
    ] {
        let o = gesture(&args);
        assert!(!o.status.success(), "{args:?}");
        assert!(!o.stderr.is_empty(), "{args:?}");
    }
}
