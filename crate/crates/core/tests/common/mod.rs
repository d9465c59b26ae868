#![allow(dead_code)]

use std::path::PathBuf;

use c2g_kd::mnist::{load_dataset, Dataset, DatasetFiles, Provenance};

/// MNIST directory from `C2G_MNIST_DIR`, else `<workspace>/data/mnist`.
pub fn mnist_dir() -> PathBuf {
    let dir = std::env::var_os("C2G_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    let probe = DatasetFiles::mnist_train(&dir);
    assert!(
        probe.images.exists() && probe.labels.exists(),
        "MNIST IDX files not found in {}; set C2G_MNIST_DIR to the directory holding \
         train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte",
        dir.display()
    );
    dir
}

pub fn mnist_test() -> Dataset {
    load_dataset(&DatasetFiles::mnist_test(mnist_dir()), Provenance::Real).expect("MNIST test set")
}

pub fn mnist_train() -> Dataset {
    load_dataset(&DatasetFiles::mnist_train(mnist_dir()), Provenance::Real).expect("MNIST train set")
}

/// Central-difference agreement: fraction of coordinates whose relative
/// error is within `tol`.
pub fn fd_fraction(analytic: &[f64], numeric: &[f64], tol: f64) -> f64 {
    let ok = analytic
        .iter()
        .zip(numeric)
        .filter(|(a, n)| ((*a - *n).abs() / a.abs().max(n.abs()).max(1e-7)) <= tol)
        .count();
    ok as f64 / analytic.len() as f64
}
