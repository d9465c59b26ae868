//! Radial-segment PCA of single digits and the per-radius error it leaves.
//!
//! `cargo run --example halo [mnist_dir] [components]`

use c2g_kd::mnist::{load_dataset, DatasetFiles, Provenance};
use c2g_kd::pca::{radial_segment_pca, radial_segment_reconstruction};
use c2g_kd::polar::{halo_profile, PolarGrid, PolarTransform};

fn main() -> c2g_kd::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "data/mnist".into());
    let k: usize = args.next().map_or(4, |s| s.parse().expect("components must be an integer"));
    let test = load_dataset(&DatasetFiles::mnist_test(&dir), Provenance::Real)?.take(5);
    let transform = PolarTransform::new(PolarGrid::default())?;

    for item in &test.items {
        let polar = transform.to_polar(&item.image);
        let basis = radial_segment_pca(&polar, k)?;
        let rec = radial_segment_reconstruction(&polar, &basis)?;
        let profile = halo_profile(&polar, &rec, k)?;
        let rmse: Vec<String> = profile.rmse.iter().map(|e| format!("{e:.3}")).collect();
        println!(
            "digit {}: spearman {:+.2}  rmse by radius [{}]",
            item.label,
            profile.radius_correlation(),
            rmse.join(" ")
        );
    }
    Ok(())
}
