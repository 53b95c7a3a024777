//! End-to-end smoke tests of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

fn texdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_texdet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn run_ok(args: &[&str]) -> Output {
    let out = texdet(args);
    assert!(
        out.status.success(),
        "command {args:?} failed: {}",
        stderr_of(&out)
    );
    out
}

fn path(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn synth_dataset_train_detect_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = path(&dir.path().join("corpus"));
    let images = path(&dir.path().join("corpus/images"));
    let annotations = path(&dir.path().join("corpus/annotations"));
    let first_image = path(&dir.path().join("corpus/images/0000.png"));
    let second_image = path(&dir.path().join("corpus/images/0001.png"));
    let ds = path(&dir.path().join("ds"));
    let model_dir = path(&dir.path().join("model"));
    let model = path(&dir.path().join("model/model.json"));
    let det = path(&dir.path().join("det"));

    run_ok(&[
        "synth",
        "--out-dir",
        &corpus,
        "--n-images",
        "20",
        "--set",
        "seed=3",
        "--set",
        "synth.width=512",
        "--set",
        "synth.height=256",
        "--set",
        "synth.n_blisters=1",
        "--set",
        "synth.n_wires=1",
    ]);
    assert!(Path::new(&first_image).exists());
    assert!(Path::new(&annotations).join("0000.json").exists());

    run_ok(&[
        "dataset",
        "--images-dir",
        &images,
        "--annotations-dir",
        &annotations,
        "--out-dir",
        &ds,
        "--set",
        "seed=3",
    ]);
    assert!(Path::new(&ds).join("features.jsonl").exists());

    run_ok(&[
        "train",
        "--dataset",
        &ds,
        "--out-dir",
        &model_dir,
        "--set",
        "seed=3",
        "--set",
        "train.n_trees=30",
    ]);
    assert!(Path::new(&model).exists());

    run_ok(&[
        "detect",
        "--model",
        &model,
        "--out-dir",
        &det,
        &first_image,
        &second_image,
    ]);
    assert!(Path::new(&det).join("0000_detections.json").exists());
    assert!(Path::new(&det).join("run.json").exists());

    // mismatched feature flags are a usage error naming both sets
    let out = texdet(&[
        "detect",
        "--model",
        &model,
        "--out-dir",
        &det,
        "--set",
        "dataset.flags=LG",
        &first_image,
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    let err = stderr_of(&out);
    assert!(err.contains("LG") && err.contains("GFW"), "stderr: {err}");
}

#[test]
fn evaluate_perfect_detections() {
    let dir = tempfile::tempdir().unwrap();
    let ann = path(&dir.path().join("ann.json"));
    let dets = path(&dir.path().join("dets.json"));
    let eval = path(&dir.path().join("eval"));
    std::fs::write(
        &ann,
        r#"{"source_id":"t","width":200,"height":200,
            "annotations":[{"x":10,"y":20,"w":30,"h":40,"label":"blister"}]}"#,
    )
    .unwrap();
    std::fs::write(
        &dets,
        r#"{"source_id":"t",
            "detections":[{"x":10,"y":20,"w":30,"h":40,"label":"blister","score":1.0}]}"#,
    )
    .unwrap();
    let out = run_ok(&[
        "evaluate",
        "--detections",
        &dets,
        "--annotations",
        &ann,
        "--out-dir",
        &eval,
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("precision 1.000 recall 1.000"),
        "stdout: {stdout}"
    );
}

#[test]
fn missing_input_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = path(&dir.path().join("nope"));
    let out_dir = path(&dir.path().join("out"));
    let out = texdet(&["train", "--dataset", &missing, "--out-dir", &out_dir]);
    assert_eq!(out.status.code(), Some(2));
}
