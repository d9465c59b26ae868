//! PCA on the small worked matrices, then the same fit by both eigen routes.
//!
//! `cargo run --example worked_example`

use c2g_kd::linalg::Matrix;
use c2g_kd::pca::{covariance_route, fit, gram_route, project, reconstruct};
use c2g_kd::pipeline::verify_examples;

fn main() -> c2g_kd::Result<()> {
    for c in verify_examples()? {
        println!("{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }

    let x = Matrix::from_rows(&[[2.0, 4.0, 1.0, 3.0], [3.0, 5.0, 2.0, 4.0], [4.0, 6.0, 3.0, 5.0]])?;
    let basis = fit(&x, 1)?;
    println!("\nmean {:?}", basis.mean);
    println!("eigenvalues {:?}", basis.eigenvalues);
    for i in 0..x.rows() {
        let z = project(&basis, x.row(i))?;
        println!("row {i}: score {:+.3} -> {:?}", z[0], reconstruct(&basis, &z)?);
    }

    // Fewer samples than dimensions: the Gram route gives the same spectrum.
    let (centered, _) = c2g_kd::linalg::mean_center(&x);
    let (cov_vals, _) = covariance_route(&centered)?;
    let (gram_vals, _) = gram_route(&centered)?;
    println!("\ncovariance route {cov_vals:?}");
    println!("gram route       {gram_vals:?}");
    Ok(())
}
