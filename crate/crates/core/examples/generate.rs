//! Train the ten class generators against a frozen teacher and draw a
//! teacher-filtered sample from each.
//!
//! `cargo run --example generate [mnist_dir] [teacher_weights] [mode]`
//! Expects weights from the `teacher` example; writes `generate.pgm` with
//! one row per class.

use c2g_kd::generator::{acceptance_rate, synthesize_dataset, train_generator, GenMode, GenTrainConfig};
use c2g_kd::mnist::{load_dataset, sample_per_class, DatasetFiles, Image, Provenance, NUM_CLASSES};
use c2g_kd::nets::FrozenTeacher;
use c2g_kd::pca::class_mean_basis;
use c2g_kd::pgm::write_grid;
use c2g_kd::polar::{PolarGrid, PolarImage, PolarTransform};

const PER_CLASS: usize = 10;

fn main() -> c2g_kd::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "data/mnist".into());
    let weights = args.next().unwrap_or_else(|| "teacher.c2gw".into());
    let mode: GenMode = args.next().map_or(Ok(GenMode::Code), |s| s.parse())?;
    let teacher = FrozenTeacher::load(&weights)?;

    let train = load_dataset(&DatasetFiles::mnist_train(&dir), Provenance::Real)?;
    let few = sample_per_class(&train, 2, 2)?;
    let grid = PolarGrid::default();
    let transform = PolarTransform::new(grid)?;
    let bases = (0..NUM_CLASSES)
        .map(|c| {
            let s: Vec<PolarImage> = few
                .items
                .iter()
                .filter(|i| i.label as usize == c)
                .map(|i| transform.to_polar(&i.image))
                .collect();
            class_mean_basis(&s, 2)
        })
        .collect::<c2g_kd::Result<Vec<_>>>()?;

    let cfg = GenTrainConfig { mode, ..Default::default() };
    let mut gens = Vec::new();
    for (c, basis) in bases.iter().enumerate() {
        let (g, history) = train_generator(c, &teacher, basis, grid, &cfg)?;
        let (first, last) = (history[0].terms, history[history.len() - 1].terms);
        println!(
            "class {c}: loss {:.3} -> {:.3}, acceptance {:.2}",
            first.total,
            last.total,
            acceptance_rate(&g, &teacher, basis, 200, 9)?
        );
        gens.push(g);
    }

    let (ds, yields) = synthesize_dataset(&gens, &teacher, &bases, PER_CLASS, 4, 50)?;
    for y in &yields {
        println!("class {}: {} accepted of {} attempts", y.class, y.accepted, y.attempts);
    }
    let mut items = ds.items;
    items.sort_by_key(|i| i.label);
    let tiles: Vec<Image> = items.into_iter().map(|i| i.image).collect();
    write_grid("generate.pgm", &tiles, PER_CLASS)?;
    println!("wrote generate.pgm");
    Ok(())
}
