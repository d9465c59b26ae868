mod common;

use std::path::Path;
use std::process::{Command, Output};

use c2g_kd::mnist::{load_idx_images, load_idx_labels};
use c2g_kd::pipeline::Manifest;

fn c2g(out: &Path, args: &[&str]) -> Output {
    let mnist = format!("paths.mnist_dir={:?}", common::mnist_dir().display().to_string());
    Command::new(env!("CARGO_BIN_EXE_c2g"))
        .args(args)
        .args(["--set", &mnist])
        .env("C2G_OUT_DIR", out)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn verify_examples_passes() {
    let o = Command::new(env!("CARGO_BIN_EXE_c2g")).arg("verify-examples").output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.lines().count() >= 10);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
    assert!(text.contains("covariance is all ones"));
    assert!(text.contains("mean [1.0, 0.25, 0.0, 0.0]"));
}

#[test]
fn bad_paths_exit_nonzero_with_stage_name() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_c2g"))
        .args(["train-teacher", "--set", "paths.mnist_dir=\"/nonexistent/mnist\""])
        .env("C2G_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("train-teacher") && err.contains("missing input"), "{err}");

    let o = c2g(dir.path(), &["train-generators"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("train-generators: missing input"), "{}", stderr(&o));

    let o = c2g(dir.path(), &["train-teacher", "--config", "/nonexistent/c2g.toml"]);
    assert!(!o.status.success());
}

#[test]
fn parameter_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = c2g(dir.path(), &["build-pca", "--k-real", "1"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("degenerate sample"), "{}", stderr(&o));

    let o = c2g(dir.path(), &["halo-report", "--components", "0"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("invalid parameter"), "{}", stderr(&o));

    let o = c2g(dir.path(), &["train-student", "--set", "student.nonsense=1"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("config error"), "{}", stderr(&o));
}

#[test]
fn build_pca_is_reproducible_and_records_sources() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = c2g(d.path(), &["build-pca"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("pca/bases.c2gb")).unwrap();
    assert_eq!(read(&a), read(&b));
    let m = Manifest::load(a.path().join("pca/manifest.txt")).unwrap();
    assert_eq!(m.get("source_count"), Some("20"));
    assert!(a.path().join("pca/class_means.pgm").exists());
    assert!(a.path().join("pca/reconstructions.pgm").exists());
}

#[test]
fn untrained_chain_and_empty_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let o = c2g(out, &["train-teacher", "--epochs", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let acc: f64 = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("test accuracy "))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((acc - 0.1).abs() < 0.07, "untrained accuracy {acc}");

    for args in [
        &["build-pca"][..],
        &["train-generators", "--steps", "1", "--set", "generator.acceptance_samples=4"][..],
        &["synthesize", "--n-per-class", "0"][..],
    ] {
        let o = c2g(out, args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    for c in 0..10 {
        assert!(out.join(format!("generators/class_{c}.c2gg")).exists());
    }
    let images = load_idx_images(out.join("synthetic/synthetic-images-idx3-ubyte")).unwrap();
    let labels = load_idx_labels(out.join("synthetic/synthetic-labels-idx1-ubyte")).unwrap();
    assert!(images.is_empty() && labels.is_empty());

    let o = c2g(out, &["train-student"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("train-student: data error"), "{}", stderr(&o));
}
