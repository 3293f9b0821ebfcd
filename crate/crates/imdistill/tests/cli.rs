//! Black-box checks of the command-line contract: exit codes, run-directory
//! hygiene, and resolved-config reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_imdistill"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn tree_bytes(root: &Path) -> Vec<(std::path::PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(std::path::PathBuf, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.push((
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                ));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    // the config copy embeds the resolved --out path, so it differs between
    // otherwise identical runs by construction
    out.retain(|(p, _)| p.file_name() != Some("config.toml".as_ref()));
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["distill", "--help"])), 0);
    // unknown flag is a usage error
    assert_eq!(code(&run(&["params", "--bogus-flag"])), 1);
    // missing required args is a usage error
    assert_eq!(code(&run(&["compose"])), 1);
}

#[test]
fn compose_rejects_out_of_range_mask_weight_naming_the_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "compose",
        "--shape", "nowhere", "--texture", "nowhere", "--background", "nowhere",
        "--mask-weight", "1.5",
        "--out", tmp.path().join("c").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1, "stderr: {}", stderr(&out));
    let msg = stderr(&out);
    assert!(msg.contains("mask-weight"), "message lacks flag name: {msg}");
    assert!(msg.contains("(0, 1]"), "message lacks the bound: {msg}");
}

#[test]
fn runtime_failures_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    // a missing checkpoint is a runtime error, not a usage error
    let out = run(&[
        "compose",
        "--shape", tmp.path().join("missing").to_str().unwrap(),
        "--texture", tmp.path().join("missing").to_str().unwrap(),
        "--background", tmp.path().join("missing").to_str().unwrap(),
        "--out", tmp.path().join("c").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
}

#[test]
fn distill_run_directory_contract_and_collision_refusal() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run1");
    let args = [
        "distill", "--im", "texture", "--profile", "mnist28",
        "--epochs", "0", "--per-class", "2",
        "--out", out_dir.to_str().unwrap(),
    ];
    let out = run(&args);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    for file in ["config.toml", "distill_config.toml", "metrics.csv", "run_complete"] {
        assert!(out_dir.join(file).exists(), "{file} missing");
    }
    assert!(out_dir.join("checkpoint_final/manifest").exists());

    // a completed run refuses to be overwritten...
    let again = run(&args);
    assert_eq!(code(&again), 1, "stderr: {}", stderr(&again));
    assert!(stderr(&again).contains("--force"), "stderr: {}", stderr(&again));

    // ...unless forced
    let forced = bin().args(args).arg("--force").output().unwrap();
    assert_eq!(code(&forced), 0, "stderr: {}", stderr(&forced));
}

#[test]
fn make_mnist_same_seed_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let out = run(&[
            "make-mnist",
            "--synth-train", "40", "--synth-test", "10",
            "--seed", "5",
            "--out", dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    }
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
}

#[test]
fn teacher_sample_same_seed_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let out = run(&[
            "teacher-sample",
            "--im", "background", "--teacher", "procedural",
            "--per-class", "2", "--seed", "9",
            "--out", dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    }
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
}

#[test]
fn params_prints_profile_counts() {
    let out = run(&["params"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(text.contains("mnist28 generator"), "{text}");
    let out = run(&["params", "--profile", "imagenet256"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(text.contains("imagenet256 generator"), "{text}");
    // unknown profile is a usage error
    assert_eq!(code(&run(&["params", "--profile", "bogus"])), 1);
}
