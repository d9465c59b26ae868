//! Every stage in order, from the teacher to the student, through the library
//! API the `c2g` binary wraps.
//!
//! `cargo run --example pipeline [config.toml] [--quick]`
//! `--quick` trims every stage so the chain finishes in about a minute;
//! the student it yields is not meant to be accurate.

use c2g_kd::pipeline::{self, Config, StudentData};

fn main() -> c2g_kd::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = match args.iter().find(|a| !a.starts_with("--")) {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if args.iter().any(|a| a == "--quick") {
        for s in [
            "teacher.epochs=1",
            "teacher.max_items_per_epoch=10000",
            "generator.steps=30",
            "generator.acceptance_samples=50",
            "synthesis.n_per_class=100",
            "student.epochs=1",
        ] {
            cfg.set(s)?;
        }
    }
    println!("config sha256 {}", cfg.hash());
    println!("outputs under {}", cfg.out_root().display());
    let mut log = |m: &str| println!("  {m}");

    let teacher = pipeline::train_teacher(&cfg, &mut log)?;
    println!("teacher test accuracy {:.4}", teacher.test_accuracy);
    pipeline::build_pca(&cfg, &mut log)?;
    let gens = pipeline::train_generators(&cfg, &mut log)?;
    for g in &gens.classes {
        println!("class {} acceptance {:.3}", g.class, g.acceptance_rate);
    }
    let synth = pipeline::synthesize(&cfg, &mut log)?;
    println!("{} synthetic items", synth.dataset.len());
    for data in [StudentData::Synthetic, StudentData::Real] {
        cfg.student.data = data;
        let r = pipeline::train_student(&cfg, &mut log)?;
        println!("student ({}) real test accuracy {:.4}", data.name(), r.test_accuracy);
    }
    Ok(())
}
