use std::path::Path;
use std::process::{Command, Output};

fn microquant(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_microquant"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> serde_json::Value {
    let out = microquant(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_ARCH: &str = r#"{
  "input_shape": [28, 28, 1],
  "layers": [
    {"type": "max_pool2d", "pool": 4, "stride": 4},
    {"type": "flatten"},
    {"type": "dense", "in_features": 49, "out_features": 24, "activation": "softmax"}
  ]
}"#;

#[test]
fn synth_train_quantize_eval_footprint_infer() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("train.csv");
    let arch = dir.path().join("tiny.json");
    std::fs::write(&arch, TINY_ARCH).unwrap();
    let r = ok(&["synth", "--out", s(&csv), "--per-class", "4", "--seed", "3"]);
    assert_eq!(r["samples"], 96);

    let float = dir.path().join("f.tqm");
    let ckpt = dir.path().join("best.tqm");
    let r = ok(&[
        "train", "--data", s(&csv), "--out", s(&float), "--arch", s(&arch), "--epochs", "3",
        "--batch-size", "16", "--seed", "1", "--checkpoint", s(&ckpt),
    ]);
    assert_eq!(r["history"].as_array().unwrap().len(), 3);
    assert!(ckpt.exists());
    assert!(dir.path().join("best.tqm.json").exists());

    let quant = dir.path().join("q.tqm");
    ok(&["quantize", "--model", s(&float), "--data", s(&csv), "--out", s(&quant)]);

    let r = ok(&["eval", "--model", s(&quant), "--data", s(&csv), "--reference", s(&float)]);
    assert_eq!(r["report"]["sample_count"], 96);
    assert!(r["agreement"].as_f64().unwrap() > 0.5);

    let r = ok(&["footprint", "--model", s(&quant), "--budget-bytes", "0"]);
    assert_eq!(r["fits"], false);
    assert_eq!(
        r["model_bytes"].as_u64().unwrap(),
        std::fs::metadata(&quant).unwrap().len()
    );

    let imgs = dir.path().join("imgs");
    ok(&["synth", "--out", s(&imgs), "--per-class", "1", "--sources"]);
    let one = imgs.join("A").join("00000.pgm");
    let r = ok(&["infer", "--model", s(&quant), "--image", s(&one), "--interp", "bicubic"]);
    assert_eq!(r["probabilities"].as_array().unwrap().len(), 24);

    let aug = dir.path().join("aug");
    let r = ok(&["augment", "--image", s(&one), "--out", s(&aug), "--mode", "interpolation"]);
    assert_eq!(r["written"].as_array().unwrap().len(), 5);
    assert!(aug.join("lanczos4.pgm").exists());
}

#[test]
fn experiment_is_byte_identical_and_control_rows_match() {
    let dir = tempfile::tempdir().unwrap();
    let arch = dir.path().join("tiny.json");
    std::fs::write(&arch, TINY_ARCH).unwrap();
    let args = [
        "experiment", "--arch", s(&arch), "--epochs", "2", "--seed", "5", "--sources-per-class", "1",
        "--test-per-class", "1", "--generalization-per-class", "1",
    ];
    let a = microquant(&args);
    let b = microquant(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let report: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);

    let mut control = args.to_vec();
    control.push("--control");
    let c = ok(&control);
    let rows = c["rows"].as_array().unwrap();
    assert_eq!(rows[0], rows[1]);
}

#[test]
fn corrupt_model_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tqm");
    std::fs::write(&bad, b"NOPE and more bytes").unwrap();
    let out = microquant(&["footprint", "--model", s(&bad)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad magic"));
}
