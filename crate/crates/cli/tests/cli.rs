//! End-to-end runs of the `mma` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mma(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_mma")).args(args).output().unwrap();
    assert!(out.status.success(), "mma {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_train_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, data, cfg, ckpt, json) = (
        dir.path().join("spec.txt"),
        dir.path().join("data"),
        dir.path().join("model.txt"),
        dir.path().join("model.ckpt"),
        dir.path().join("metrics.json"),
    );
    fs::write(&spec, "num_points=32\nclutter_fraction=0.25\n").unwrap();
    mma(&["gen-data", "--spec", s(&spec), "--scenes", "4", "--out", s(&data), "--seed", "3"]);
    assert_eq!(fs::read_dir(&data).unwrap().count(), 4);

    fs::write(&cfg, "widths=4,4,6,6\nneighbors=4,4,4,4\nattention_dim=2\nhead_hidden=4\nepochs=1\nbatch_size=2\n").unwrap();
    mma(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&ckpt)]);
    assert!(fs::read(&ckpt).unwrap().starts_with(b"MMACKPT1"));

    mma(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--json", s(&json)]);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    let acc = metrics["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn corrupt_checkpoint_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("bad.ckpt");
    fs::write(&ckpt, b"MMACKPT1 truncated").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mma"))
        .args(["eval", "--ckpt", s(&ckpt), "--data", s(dir.path()), "--json", s(&dir.path().join("m.json"))])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn unknown_subcommand_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_mma")).arg("frobnicate").output().unwrap();
    assert!(!out.status.success());
}
