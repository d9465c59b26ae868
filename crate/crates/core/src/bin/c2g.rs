use std::path::PathBuf;
use std::process::ExitCode;

use c2g_kd::pipeline::{self, Config, StudentData};
use c2g_kd::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "c2g", version, about = "PCA-guided data-free distillation on MNIST")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config value, e.g. `--set generator.beta=0.5`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the LeNet-5 teacher on MNIST.
    TrainTeacher {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_items: Option<usize>,
    },
    /// Fit one polar PCA basis per class from a few real digits.
    BuildPca {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k_real: Option<usize>,
        #[arg(long)]
        components: Option<usize>,
    },
    /// Train the ten class generators against the frozen teacher.
    TrainGenerators {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Emit a teacher-filtered synthetic IDX dataset.
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_per_class: Option<usize>,
    },
    /// Train a student and evaluate it on the real test set.
    TrainStudent {
        #[command(flatten)]
        common: Common,
        /// synthetic, real or shuffled.
        #[arg(long)]
        data: Option<StudentData>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Check the small PCA worked examples.
    VerifyExamples,
    /// Per-radius reconstruction error of radial-segment PCA.
    HaloReport {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        components: Option<usize>,
        #[arg(long)]
        digits: Option<usize>,
    },
}

fn config(common: &Common, overrides: &[(&str, Option<String>)]) -> Result<Config, Error> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for s in &common.set {
        cfg.set(s)?;
    }
    for (key, value) in overrides {
        if let Some(v) = value {
            let quoted = if v.parse::<f64>().is_ok() { v.clone() } else { format!("{v:?}") };
            cfg.set(&format!("{key}={quoted}"))?;
        }
    }
    Ok(cfg)
}

fn s<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut log = |m: &str| eprintln!("{m}");
    match cli.command {
        Command::TrainTeacher {
            common,
            epochs,
            max_items,
        } => {
            let cfg = config(
                &common,
                &[("teacher.epochs", s(&epochs)), ("teacher.max_items_per_epoch", s(&max_items))],
            )
            .map_err(|e| e.in_stage("train-teacher"))?;
            let r = pipeline::train_teacher(&cfg, &mut log).map_err(|e| e.in_stage("train-teacher"))?;
            println!("test accuracy {:.4}", r.test_accuracy);
            println!("weights {}", r.weights.display());
        }
        Command::BuildPca {
            common,
            k_real,
            components,
        } => {
            let cfg = config(&common, &[("pca.k_real", s(&k_real)), ("pca.components", s(&components))])
                .map_err(|e| e.in_stage("build-pca"))?;
            let r = pipeline::build_pca(&cfg, &mut log).map_err(|e| e.in_stage("build-pca"))?;
            println!("bases {}", r.path.display());
        }
        Command::TrainGenerators {
            common,
            mode,
            steps,
            alpha,
            beta,
        } => {
            let cfg = config(
                &common,
                &[
                    ("generator.mode", mode),
                    ("generator.steps", s(&steps)),
                    ("generator.alpha", s(&alpha)),
                    ("generator.beta", s(&beta)),
                ],
            )
            .map_err(|e| e.in_stage("train-generators"))?;
            let r = pipeline::train_generators(&cfg, &mut log).map_err(|e| e.in_stage("train-generators"))?;
            for c in &r.classes {
                println!("class {} acceptance {:.3}", c.class, c.acceptance_rate);
            }
        }
        Command::Synthesize { common, n_per_class } => {
            let cfg = config(&common, &[("synthesis.n_per_class", s(&n_per_class))])
                .map_err(|e| e.in_stage("synthesize"))?;
            let r = pipeline::synthesize(&cfg, &mut log).map_err(|e| e.in_stage("synthesize"))?;
            println!("{} items written to {}", r.dataset.len(), r.files.images.display());
        }
        Command::TrainStudent { common, data, epochs } => {
            let cfg = config(
                &common,
                &[("student.data", data.map(|d| d.name().to_string())), ("student.epochs", s(&epochs))],
            )
            .map_err(|e| e.in_stage("train-student"))?;
            let r = pipeline::train_student(&cfg, &mut log).map_err(|e| e.in_stage("train-student"))?;
            println!(
                "student ({}) real test accuracy {:.4} (reported in the original study: {:.2})",
                r.data.name(),
                r.test_accuracy,
                pipeline::REFERENCE_STUDENT_ACCURACY
            );
        }
        Command::VerifyExamples => {
            let checks = pipeline::verify_examples().map_err(|e| e.in_stage("verify-examples"))?;
            let mut failed = 0;
            for c in &checks {
                println!("{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                return Err(Error::Contract(format!("{failed} example checks failed")).in_stage("verify-examples"));
            }
        }
        Command::HaloReport {
            common,
            components,
            digits,
        } => {
            let cfg = config(&common, &[("halo.components", s(&components)), ("halo.digits", s(&digits))])
                .map_err(|e| e.in_stage("halo-report"))?;
            let r = pipeline::halo_report(&cfg, &mut log).map_err(|e| e.in_stage("halo-report"))?;
            println!(
                "positive rank correlation for {:.1}% of digits; table {}",
                100.0 * r.positive_fraction(),
                r.csv.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
