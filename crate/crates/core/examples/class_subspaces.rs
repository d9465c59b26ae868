//! One polar PCA basis per class from two real digits each.
//!
//! `cargo run --example class_subspaces [mnist_dir]` writes
//! `class_subspaces.pgm`: class means on the top row, then random draws.

use c2g_kd::mnist::{load_dataset, sample_per_class, DatasetFiles, Image, Provenance, NUM_CLASSES};
use c2g_kd::pca::{class_mean_basis, randomize_scores, reconstruct};
use c2g_kd::pgm::write_grid;
use c2g_kd::polar::{PolarGrid, PolarImage, PolarTransform};

fn main() -> c2g_kd::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "data/mnist".into());
    let train = load_dataset(&DatasetFiles::mnist_train(&dir), Provenance::Real)?;
    let few = sample_per_class(&train, 2, 2)?;
    let transform = PolarTransform::new(PolarGrid::default())?;

    let mut means = Vec::new();
    let mut draws = Vec::new();
    for c in 0..NUM_CLASSES {
        let samples: Vec<PolarImage> = few
            .items
            .iter()
            .filter(|i| i.label as usize == c)
            .map(|i| transform.to_polar(&i.image))
            .collect();
        let basis = class_mean_basis(&samples, 2)?;
        println!("class {c}: rank {} eigenvalues {:?}", basis.rank(), basis.eigenvalues);
        means.push(transform.from_polar(&basis.mean));
        for seed in 0..3 {
            let z = randomize_scores(&basis, 3.0, seed)?;
            draws.push((seed, transform.from_polar(&reconstruct(&basis, &z)?)));
        }
    }
    draws.sort_by_key(|(seed, _)| *seed);
    let tiles: Vec<Image> = means.into_iter().chain(draws.into_iter().map(|(_, img)| img)).collect();
    write_grid("class_subspaces.pgm", &tiles, NUM_CLASSES)?;
    println!("wrote class_subspaces.pgm");
    Ok(())
}
