//! Cartesian to polar and back on real test digits.
//!
//! `cargo run --example polar_roundtrip [mnist_dir]` writes
//! `polar_roundtrip.pgm`: originals on the top row, round trips below.

use c2g_kd::mnist::{load_dataset, DatasetFiles, Image, Provenance};
use c2g_kd::pgm::write_grid;
use c2g_kd::polar::{PolarGrid, PolarTransform};

fn main() -> c2g_kd::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "data/mnist".into());
    let test = load_dataset(&DatasetFiles::mnist_test(&dir), Provenance::Real)?.take(10);
    let grid = PolarGrid::default();
    let transform = PolarTransform::new(grid)?;
    println!("grid {} radii x {} angles, r_max {}", grid.n_radii, grid.n_angles, grid.r_max);

    let mut back = Vec::new();
    for item in &test.items {
        let polar = transform.to_polar(&item.image);
        let rt = transform.from_polar(polar.data());
        let mse = item
            .image
            .pixels()
            .iter()
            .zip(rt.pixels())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / 784.0;
        println!("digit {} rmse {:.4}", item.label, mse.sqrt());
        back.push(rt);
    }
    let tiles: Vec<Image> = test.items.iter().map(|i| i.image.clone()).chain(back).collect();
    write_grid("polar_roundtrip.pgm", &tiles, 10)?;
    println!("wrote polar_roundtrip.pgm");
    Ok(())
}
