//! End-to-end stages driven by one config file: teacher training, class
//! bases, generator training, synthesis, student training, the worked
//! examples and the halo report.
//!
//! Each stage writes its outputs plus a `manifest.txt` of `key = value` lines
//! (config hash, seeds, input and output checksums, stage statistics) under
//! its own directory of the output root.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::generator::{
    acceptance_rate, synthesize_dataset, train_generator, ClassYield, CondGenerator, GenLossWeights, GenMode,
    GenTrainConfig,
};
use crate::linalg::{covariance, mean_center, Matrix};
use crate::mnist::{
    load_dataset, sample_indices_per_class, save_dataset, Dataset, DatasetFiles, Image, LabeledImage, Provenance,
    NUM_CLASSES,
};
use crate::nets::{hex, history_csv, train_supervised_with, EpochStats, FrozenTeacher, LeNet5, TrainConfig};
use crate::pca::{
    class_mean_basis, fit, project, radial_segment_pca, radial_segment_reconstruction, reconstruct, ClassSubspaces,
};
use crate::pgm;
use crate::polar::{halo_profile, PolarGrid, PolarTransform};

/// Environment variable that overrides `paths.out_dir`.
pub const OUT_DIR_ENV: &str = "C2G_OUT_DIR";
/// Accuracy reported for the synthetic-only student in the original study.
pub const REFERENCE_STUDENT_ACCURACY: f64 = 0.69;

pub const TEACHER_DIR: &str = "teacher";
pub const PCA_DIR: &str = "pca";
pub const GENERATOR_DIR: &str = "generators";
pub const SYNTH_DIR: &str = "synthetic";
pub const STUDENT_DIR: &str = "student";
pub const HALO_DIR: &str = "halo";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub mnist_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            mnist_dir: PathBuf::from("data/mnist"),
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedsConfig {
    pub teacher_seed: u64,
    pub pca_seed: u64,
    pub gen_seed: u64,
    pub synth_seed: u64,
    pub student_seed: u64,
}

impl Default for SeedsConfig {
    fn default() -> Self {
        SeedsConfig {
            teacher_seed: 1,
            pca_seed: 2,
            gen_seed: 3,
            synth_seed: 4,
            student_seed: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolarConfig {
    pub n_radii: usize,
    pub n_angles: usize,
    pub r_max: f64,
}

impl Default for PolarConfig {
    fn default() -> Self {
        let g = PolarGrid::default();
        PolarConfig {
            n_radii: g.n_radii,
            n_angles: g.n_angles,
            r_max: g.r_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaConfig {
    /// Real training images sampled per class.
    pub k_real: usize,
    /// Components kept per class basis.
    pub components: usize,
}

impl Default for PcaConfig {
    fn default() -> Self {
        PcaConfig {
            k_real: 2,
            components: 2,
        }
    }
}

/// Supervised training settings shared by teacher and student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Train on only this many items per epoch (quick runs).
    pub max_items_per_epoch: Option<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            epochs: 3,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            max_items_per_epoch: None,
        }
    }
}

impl NetConfig {
    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            seed,
            max_items_per_epoch: self.max_items_per_epoch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// `"code"` or `"image"`.
    pub mode: String,
    pub latent_dim: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Fresh samples per class used to report the acceptance rate.
    pub acceptance_samples: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let g = GenTrainConfig::default();
        GeneratorConfig {
            mode: g.mode.to_string(),
            latent_dim: g.latent_dim,
            steps: g.steps,
            batch_size: g.batch_size,
            learning_rate: g.learning_rate,
            momentum: g.momentum,
            alpha: g.weights.alpha,
            beta: g.weights.beta,
            acceptance_samples: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub n_per_class: usize,
    pub attempt_factor: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            n_per_class: 1000,
            attempt_factor: crate::generator::DEFAULT_ATTEMPT_FACTOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudentData {
    /// Teacher-filtered synthetic set only.
    Synthetic,
    /// Real MNIST training set (upper reference).
    Real,
    /// Synthetic images with permuted labels (lower reference).
    Shuffled,
}

impl StudentData {
    pub fn name(self) -> &'static str {
        match self {
            StudentData::Synthetic => "synthetic",
            StudentData::Real => "real",
            StudentData::Shuffled => "shuffled",
        }
    }
}

impl std::str::FromStr for StudentData {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(StudentData::Synthetic),
            "real" => Ok(StudentData::Real),
            "shuffled" => Ok(StudentData::Shuffled),
            _ => Err(Error::Parameter(format!(
                "student data must be synthetic, real or shuffled, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    pub data: StudentData,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_items_per_epoch: Option<usize>,
}

impl Default for StudentConfig {
    fn default() -> Self {
        let n = NetConfig::default();
        StudentConfig {
            data: StudentData::Synthetic,
            epochs: 5,
            batch_size: n.batch_size,
            learning_rate: n.learning_rate,
            momentum: n.momentum,
            max_items_per_epoch: None,
        }
    }
}

impl StudentConfig {
    pub fn net(&self) -> NetConfig {
        NetConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            max_items_per_epoch: self.max_items_per_epoch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HaloConfig {
    pub components: usize,
    /// The first `digits` images of the MNIST test set are analysed.
    pub digits: usize,
}

impl Default for HaloConfig {
    fn default() -> Self {
        HaloConfig {
            components: 4,
            digits: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub paths: PathsConfig,
    pub seeds: SeedsConfig,
    pub polar: PolarConfig,
    pub pca: PcaConfig,
    pub teacher: NetConfig,
    pub generator: GeneratorConfig,
    pub synthesis: SynthesisConfig,
    pub student: StudentConfig,
    pub halo: HaloConfig,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::Path(path.to_path_buf()));
        }
        Config::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    /// Output root; `C2G_OUT_DIR` wins over the config.
    pub fn out_root(&self) -> PathBuf {
        std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.paths.out_dir.clone())
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.out_root().join(stage)
    }

    pub fn grid(&self) -> Result<PolarGrid> {
        let g = PolarGrid {
            n_radii: self.polar.n_radii,
            n_angles: self.polar.n_angles,
            r_max: self.polar.r_max,
            ..PolarGrid::default()
        };
        g.validate()?;
        Ok(g)
    }

    pub fn gen_train_config(&self) -> Result<GenTrainConfig> {
        let g = &self.generator;
        Ok(GenTrainConfig {
            mode: g.mode.parse::<GenMode>()?,
            latent_dim: g.latent_dim,
            steps: g.steps,
            batch_size: g.batch_size,
            learning_rate: g.learning_rate,
            momentum: g.momentum,
            seed: self.seeds.gen_seed,
            weights: GenLossWeights::new(g.alpha, g.beta)?,
        })
    }

    /// Applies `section.key=value` using the same syntax as the config file.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let (section, field) = key
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override key {key:?} is not section.field")))?;
        let mut doc: toml::Table = toml::from_str(&self.to_toml()).expect("round trip");
        let value = value.trim();
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        doc.entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{section} is not a section")))?
            .insert(field.to_string(), parsed);
        *self = Config::parse(&toml::to_string(&doc).expect("table serializes"))?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn file_checksum(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::Path(path.to_path_buf()));
    }
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Ordered `key = value` record written next to every stage's outputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    fn for_stage(stage: &str, cfg: &Config) -> Self {
        let mut m = Manifest::default();
        m.push("stage", stage);
        m.push("config_sha256", cfg.hash());
        m.push("teacher_seed", cfg.seeds.teacher_seed);
        m.push("pca_seed", cfg.seeds.pca_seed);
        m.push("gen_seed", cfg.seeds.gen_seed);
        m.push("synth_seed", cfg.seeds.synth_seed);
        m.push("student_seed", cfg.seeds.student_seed);
        m
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let sum = file_checksum(path)?;
        self.push(format!("input.{}", file_name(path)), sum);
        Ok(())
    }

    fn output(&mut self, path: &Path) -> Result<()> {
        let sum = file_checksum(path)?;
        self.push(format!("output.{}", file_name(path)), sum);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::format("manifest", format!("bad line {line:?}")))?;
            m.push(k, v);
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::Path(path.to_path_buf()));
        }
        Manifest::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.txt");
        write_text(&path, &self.render())?;
        Ok(path)
    }
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    crate::weights::write(path, text.as_bytes())
}

/// Stage output locations.
pub fn teacher_path(cfg: &Config) -> PathBuf {
    cfg.stage_dir(TEACHER_DIR).join("teacher.c2gw")
}

pub fn bases_path(cfg: &Config) -> PathBuf {
    cfg.stage_dir(PCA_DIR).join("bases.c2gb")
}

pub fn generator_path(cfg: &Config, class: usize) -> PathBuf {
    cfg.stage_dir(GENERATOR_DIR).join(format!("class_{class}.c2gg"))
}

pub fn synthetic_files(cfg: &Config) -> DatasetFiles {
    DatasetFiles::with_prefix(cfg.stage_dir(SYNTH_DIR), "synthetic")
}

pub fn student_path(cfg: &Config, data: StudentData) -> PathBuf {
    cfg.stage_dir(STUDENT_DIR).join(format!("student-{}.c2gw", data.name()))
}

fn mnist_train(cfg: &Config) -> DatasetFiles {
    DatasetFiles::mnist_train(&cfg.paths.mnist_dir)
}

fn mnist_test(cfg: &Config) -> DatasetFiles {
    DatasetFiles::mnist_test(&cfg.paths.mnist_dir)
}

/// Progress sink; the CLI prints, tests discard.
pub type Log<'a> = &'a mut dyn FnMut(&str);

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherReport {
    pub test_accuracy: f64,
    pub history: Vec<EpochStats>,
    pub weights: PathBuf,
    pub checksum: String,
    pub manifest: Manifest,
}

pub fn train_teacher(cfg: &Config, log: Log) -> Result<TeacherReport> {
    let (train_files, test_files) = (mnist_train(cfg), mnist_test(cfg));
    let mut manifest = Manifest::for_stage("train-teacher", cfg);
    for p in [&train_files.images, &train_files.labels, &test_files.images, &test_files.labels] {
        manifest.input(p)?;
    }
    let train = load_dataset(&train_files, Provenance::Real)?;
    let test = load_dataset(&test_files, Provenance::Real)?;
    let (net, history) = fit_lenet(&train, &cfg.teacher, cfg.seeds.teacher_seed, "teacher", log)?;
    let dir = cfg.stage_dir(TEACHER_DIR);
    let path = teacher_path(cfg);
    net.save_weights(&path)?;
    let teacher = FrozenTeacher::load(&path)?;
    let test_accuracy = teacher.accuracy(&test);
    log(&format!("teacher test accuracy {test_accuracy:.4}"));
    write_text(&dir.join("train_log.csv"), &history_csv(&history))?;
    manifest.output(&path)?;
    manifest.push("test_accuracy", format!("{test_accuracy:.6}"));
    manifest.push("teacher_checksum", teacher.checksum());
    manifest.write(&dir)?;
    Ok(TeacherReport {
        test_accuracy,
        history,
        weights: path,
        checksum: teacher.checksum(),
        manifest,
    })
}

fn fit_lenet(data: &Dataset, net_cfg: &NetConfig, seed: u64, what: &str, log: Log) -> Result<(LeNet5, Vec<EpochStats>)> {
    let mut net = LeNet5::init(seed);
    let history = train_supervised_with(&mut net, data, &net_cfg.train_config(seed), |s| {
        log(&format!(
            "{what} epoch {} loss {:.4} train accuracy {:.4}",
            s.epoch, s.loss, s.accuracy
        ))
    })?;
    Ok((net, history))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaReport {
    pub subspaces: ClassSubspaces,
    pub path: PathBuf,
    pub manifest: Manifest,
}

pub fn build_pca(cfg: &Config, log: Log) -> Result<PcaReport> {
    let files = mnist_train(cfg);
    let mut manifest = Manifest::for_stage("build-pca", cfg);
    manifest.input(&files.images)?;
    manifest.input(&files.labels)?;
    let train = load_dataset(&files, Provenance::Real)?;
    let grid = cfg.grid()?;
    let transform = PolarTransform::new(grid)?;
    let ids = sample_indices_per_class(&train.labels(), cfg.pca.k_real, cfg.seeds.pca_seed)?;
    let mut bases = Vec::with_capacity(NUM_CLASSES);
    let mut source_ids = Vec::with_capacity(NUM_CLASSES);
    let (mut originals, mut round_trips, mut recons, mut means) = (vec![], vec![], vec![], vec![]);
    for class in 0..NUM_CLASSES {
        let class_ids: Vec<usize> = ids
            .iter()
            .copied()
            .filter(|&i| train.items[i].label as usize == class)
            .collect();
        let polar: Vec<_> = class_ids.iter().map(|&i| transform.to_polar(&train.items[i].image)).collect();
        let basis = class_mean_basis(&polar, cfg.pca.components)?;
        log(&format!(
            "class {class}: samples {class_ids:?}, eigenvalues {:?}",
            basis.eigenvalues.iter().map(|l| format!("{l:.4}")).collect::<Vec<_>>()
        ));
        means.push(transform.from_polar(&basis.mean));
        for (p, &i) in polar.iter().zip(&class_ids) {
            originals.push(train.items[i].image.clone());
            round_trips.push(transform.from_polar(p.data()));
            recons.push(transform.from_polar(&reconstruct(&basis, &project(&basis, p.data())?)?));
        }
        bases.push(basis);
        source_ids.push(class_ids);
    }
    let subspaces = ClassSubspaces {
        grid,
        bases,
        source_ids,
    };
    let dir = cfg.stage_dir(PCA_DIR);
    let path = bases_path(cfg);
    subspaces.save(&path)?;
    pgm::write_grid(dir.join("class_means.pgm"), &means, NUM_CLASSES)?;
    let per_row = originals.len().max(1);
    let mut sheet = originals;
    sheet.extend(round_trips);
    sheet.extend(recons);
    pgm::write_grid(dir.join("reconstructions.pgm"), &sheet, per_row)?;
    manifest.output(&path)?;
    manifest.push("k_real", cfg.pca.k_real);
    manifest.push("components", cfg.pca.components);
    manifest.push("source_count", subspaces.source_ids.iter().map(Vec::len).sum::<usize>());
    for (c, ids) in subspaces.source_ids.iter().enumerate() {
        manifest.push(format!("source_ids.{c}"), join(ids));
    }
    manifest.write(&dir)?;
    Ok(PcaReport {
        subspaces,
        path,
        manifest,
    })
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSummary {
    pub class: usize,
    pub acceptance_rate: f64,
    pub first_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorsReport {
    pub classes: Vec<GeneratorSummary>,
    pub manifest: Manifest,
}

pub fn train_generators(cfg: &Config, log: Log) -> Result<GeneratorsReport> {
    let gen_cfg = cfg.gen_train_config()?;
    let mut manifest = Manifest::for_stage("train-generators", cfg);
    let (tpath, bpath) = (teacher_path(cfg), bases_path(cfg));
    manifest.input(&tpath)?;
    manifest.input(&bpath)?;
    let teacher = FrozenTeacher::load(&tpath)?;
    let subspaces = ClassSubspaces::load(&bpath)?;
    let before = teacher.checksum();
    let dir = cfg.stage_dir(GENERATOR_DIR);
    let mut classes = Vec::with_capacity(NUM_CLASSES);
    let mut summary = String::from("class,acceptance_rate,first_loss,final_loss\n");
    for class in 0..NUM_CLASSES {
        let basis = subspaces.basis(class)?;
        let (g, history) = train_generator(class, &teacher, basis, subspaces.grid, &gen_cfg)?;
        let path = generator_path(cfg, class);
        g.save(&path)?;
        let stored = CondGenerator::load(&path)?;
        let rate = acceptance_rate(
            &stored,
            &teacher,
            basis,
            cfg.generator.acceptance_samples,
            cfg.seeds.gen_seed.wrapping_add(1000 + class as u64),
        )?;
        let mut csv = String::from("step,total,distill,pca,div\n");
        for s in &history {
            let t = s.terms;
            let _ = writeln!(csv, "{},{:.8},{:.8},{:.8e},{:.8}", s.step, t.total, t.distill, t.pca, t.div);
        }
        write_text(&dir.join(format!("loss_class_{class}.csv")), &csv)?;
        let first = history.first().map_or(f64::NAN, |s| s.terms.total);
        let last = history.last().map_or(f64::NAN, |s| s.terms.total);
        log(&format!(
            "class {class}: loss {first:.4} -> {last:.4}, teacher acceptance {rate:.3}"
        ));
        let _ = writeln!(summary, "{class},{rate:.6},{first:.8},{last:.8}");
        manifest.output(&path)?;
        manifest.push(format!("acceptance_rate.{class}"), format!("{rate:.6}"));
        classes.push(GeneratorSummary {
            class,
            acceptance_rate: rate,
            first_loss: first,
            final_loss: last,
        });
    }
    if teacher.checksum() != before {
        return Err(Error::Contract("teacher weights changed during generator training".into()));
    }
    write_text(&dir.join("acceptance.csv"), &summary)?;
    manifest.push("mode", &cfg.generator.mode);
    manifest.push("alpha", cfg.generator.alpha);
    manifest.push("beta", cfg.generator.beta);
    manifest.push("latent_dim", cfg.generator.latent_dim);
    manifest.push("teacher_checksum", before);
    manifest.write(&dir)?;
    Ok(GeneratorsReport { classes, manifest })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisReport {
    pub dataset: Dataset,
    pub yields: Vec<ClassYield>,
    pub files: DatasetFiles,
    pub manifest: Manifest,
}

pub fn synthesize(cfg: &Config, log: Log) -> Result<SynthesisReport> {
    let mut manifest = Manifest::for_stage("synthesize", cfg);
    let (tpath, bpath) = (teacher_path(cfg), bases_path(cfg));
    manifest.input(&tpath)?;
    manifest.input(&bpath)?;
    let teacher = FrozenTeacher::load(&tpath)?;
    let subspaces = ClassSubspaces::load(&bpath)?;
    let mut gens = Vec::with_capacity(NUM_CLASSES);
    for class in 0..NUM_CLASSES {
        let path = generator_path(cfg, class);
        manifest.input(&path)?;
        gens.push(CondGenerator::load(&path)?);
    }
    let (dataset, yields) = synthesize_dataset(
        &gens,
        &teacher,
        &subspaces.bases,
        cfg.synthesis.n_per_class,
        cfg.seeds.synth_seed,
        cfg.synthesis.attempt_factor,
    )?;
    for y in &yields {
        log(&format!(
            "class {}: kept {} of {} ({:.3})",
            y.class,
            y.accepted,
            y.attempts,
            y.rate()
        ));
        manifest.push(format!("attempts.{}", y.class), y.attempts);
        manifest.push(format!("accepted.{}", y.class), y.accepted);
        manifest.push(format!("rejected.{}", y.class), y.attempts - y.accepted);
    }
    let files = synthetic_files(cfg);
    save_dataset(&dataset, &files)?;
    let n = cfg.synthesis.n_per_class;
    let mut tiles = Vec::new();
    for class in 0..NUM_CLASSES {
        tiles.extend(
            (0..10).map(|j| {
                if j < n {
                    dataset.items[class * n + j].image.clone()
                } else {
                    Image::zeros()
                }
            }),
        );
    }
    pgm::write_grid(cfg.stage_dir(SYNTH_DIR).join("samples.pgm"), &tiles, 10)?;
    manifest.output(&files.images)?;
    manifest.output(&files.labels)?;
    manifest.push("n_per_class", n);
    manifest.push("items", dataset.len());
    manifest.write(&cfg.stage_dir(SYNTH_DIR))?;
    Ok(SynthesisReport {
        dataset,
        yields,
        files,
        manifest,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentReport {
    pub data: StudentData,
    pub test_accuracy: f64,
    pub training_items: usize,
    pub history: Vec<EpochStats>,
    pub weights: PathBuf,
    pub manifest: Manifest,
}

pub fn train_student(cfg: &Config, log: Log) -> Result<StudentReport> {
    let data = cfg.student.data;
    let mut manifest = Manifest::for_stage("train-student", cfg);
    let test_files = mnist_test(cfg);
    manifest.input(&test_files.images)?;
    manifest.input(&test_files.labels)?;
    let train = match data {
        StudentData::Real => {
            let f = mnist_train(cfg);
            manifest.input(&f.images)?;
            manifest.input(&f.labels)?;
            load_dataset(&f, Provenance::Real)?
        }
        StudentData::Synthetic | StudentData::Shuffled => {
            let f = synthetic_files(cfg);
            manifest.input(&f.images)?;
            manifest.input(&f.labels)?;
            let ds = load_dataset(&f, Provenance::Synthetic)?;
            if data == StudentData::Shuffled {
                shuffle_labels(&ds, cfg.seeds.student_seed)
            } else {
                ds
            }
        }
    };
    if train.is_empty() {
        return Err(Error::Data(format!("{} training set is empty", data.name())));
    }
    let test = load_dataset(&test_files, Provenance::Real)?;
    let (net, history) = fit_lenet(&train, &cfg.student.net(), cfg.seeds.student_seed, "student", log)?;
    let path = student_path(cfg, data);
    net.save_weights(&path)?;
    let stored = LeNet5::load_weights(&path)?;
    let test_accuracy = stored.accuracy(&test);
    log(&format!(
        "student ({}) real test accuracy {test_accuracy:.4} (reference {REFERENCE_STUDENT_ACCURACY:.2})",
        data.name()
    ));
    let dir = cfg.stage_dir(STUDENT_DIR);
    write_text(&dir.join(format!("train_log-{}.csv", data.name())), &history_csv(&history))?;
    manifest.output(&path)?;
    manifest.push("data", data.name());
    manifest.push("training_items", train.len());
    manifest.push("test_accuracy", format!("{test_accuracy:.6}"));
    manifest.push("reference_accuracy", REFERENCE_STUDENT_ACCURACY);
    let mpath = manifest.write(&dir)?;
    fs::rename(&mpath, dir.join(format!("manifest-{}.txt", data.name()))).map_err(|e| Error::io(&mpath, e))?;
    Ok(StudentReport {
        data,
        test_accuracy,
        training_items: train.len(),
        history,
        weights: path,
        manifest,
    })
}

/// Same images, labels permuted by a seeded shuffle.
pub fn shuffle_labels(ds: &Dataset, seed: u64) -> Dataset {
    let mut labels = ds.labels();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let items = ds
        .items
        .iter()
        .zip(labels)
        .map(|(it, label)| LabeledImage {
            image: it.image.clone(),
            label,
        })
        .collect();
    Dataset::new(items, ds.provenance)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// The 4x3 worked example and the 4x4 typology example, checked against
/// their published values.
pub fn verify_examples() -> Result<Vec<Check>> {
    const TOL: f64 = 1e-9;
    let mut out = Vec::new();

    let x = Matrix::from_rows(&[[2.0, 4.0, 1.0, 3.0], [3.0, 5.0, 2.0, 4.0], [4.0, 6.0, 3.0, 5.0]])?;
    let (centered, mu) = mean_center(&x);
    out.push(check(
        "worked: mean",
        close(&mu, &[3.0, 5.0, 2.0, 4.0], TOL),
        format!("{mu:?}"),
    ));
    let want_centered = [-1.0, -1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
    out.push(check(
        "worked: centered matrix",
        close(centered.as_slice(), &want_centered, TOL),
        format!("{:?}", centered.as_slice()),
    ));
    let cov = covariance(&centered)?;
    out.push(check(
        "worked: covariance is all ones",
        close(cov.as_slice(), &[1.0; 16], TOL),
        format!("{:?}", cov.as_slice()),
    ));
    let basis = fit(&x, 1)?;
    let v = basis.components.row(0).to_vec();
    let flip = if v[0] < 0.0 { -1.0 } else { 1.0 };
    out.push(check(
        "worked: first eigenvector is +-1/2 [1,1,1,1]",
        close(&v.iter().map(|a| a * flip).collect::<Vec<_>>(), &[0.5; 4], TOL),
        format!("{v:?}"),
    ));
    let scores: Vec<f64> = (0..3).map(|i| project(&basis, x.row(i)).map(|z| z[0] * flip)).collect::<Result<_>>()?;
    out.push(check(
        "worked: scores [-2, 0, 2]",
        close(&scores, &[-2.0, 0.0, 2.0], TOL),
        format!("{scores:?}"),
    ));
    let mut exact = true;
    for i in 0..3 {
        exact &= close(&reconstruct(&basis, &project(&basis, x.row(i))?)?, x.row(i), TOL);
    }
    out.push(check("worked: exact rank-1 reconstruction", exact, String::new()));

    let train = Matrix::from_rows(&[[1.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]])?;
    let tb = fit(&train, 4)?;
    out.push(check(
        "typology: mean [1.0, 0.25, 0.0, 0.0]",
        tb.mean == [1.0, 0.25, 0.0, 0.0],
        format!("{:?}", tb.mean),
    ));
    let w0 = tb.components.row(0);
    out.push(check(
        "typology: first component +-[0,1,0,0]",
        (w0[1].abs() - 1.0).abs() <= TOL && w0[0].abs() <= TOL && w0[2].abs() <= TOL && w0[3].abs() <= TOL,
        format!("{w0:?}"),
    ));
    let test = [[0.3, 1.0, 0.0, 0.0], [0.5, 0.0, 0.0, 0.0], [0.0; 4], [0.0; 4]];
    let (mut patch_kept, mut off_span) = (true, true);
    for row in &test {
        let rec = reconstruct(&tb, &project(&tb, row)?)?;
        // The component along the typology direction is reproduced exactly;
        // what is lost lies in the other coordinates.
        patch_kept &= (rec[1] - row[1]).abs() <= TOL;
        let resid: Vec<f64> = row.iter().zip(&rec).map(|(a, b)| a - b).collect();
        off_span &= resid[1].abs() <= TOL;
    }
    out.push(check(
        "typology: deviating patch retained in the aligned coordinate",
        patch_kept,
        String::new(),
    ));
    out.push(check(
        "typology: reconstruction error lies outside the span",
        off_span,
        String::new(),
    ));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaloReport {
    pub components: usize,
    /// Spearman coefficient of RMSE against radius, one per digit.
    pub correlations: Vec<f64>,
    pub max_rmse: f64,
    pub csv: PathBuf,
}

impl HaloReport {
    pub fn positive_fraction(&self) -> f64 {
        if self.correlations.is_empty() {
            return 0.0;
        }
        self.correlations.iter().filter(|&&c| c > 0.0).count() as f64 / self.correlations.len() as f64
    }
}

pub fn halo_report(cfg: &Config, log: Log) -> Result<HaloReport> {
    let k = cfg.halo.components;
    if k == 0 {
        return Err(Error::Parameter("halo report needs at least one component".into()));
    }
    let files = mnist_test(cfg);
    let mut manifest = Manifest::for_stage("halo-report", cfg);
    manifest.input(&files.images)?;
    manifest.input(&files.labels)?;
    let test = load_dataset(&files, Provenance::Real)?.take(cfg.halo.digits);
    let grid = cfg.grid()?;
    let transform = PolarTransform::new(grid)?;
    let mut csv = String::from("index,label");
    for r in 0..grid.n_radii {
        let _ = write!(csv, ",rmse_r{r}");
    }
    csv.push_str(",spearman\n");
    let (mut correlations, mut max_rmse) = (Vec::new(), 0.0f64);
    for (i, item) in test.items.iter().enumerate() {
        let p = transform.to_polar(&item.image);
        let basis = radial_segment_pca(&p, k)?;
        let rec = radial_segment_reconstruction(&p, &basis)?;
        let profile = halo_profile(&p, &rec, k)?;
        let rho = profile.radius_correlation();
        let _ = write!(csv, "{i},{}", item.label);
        for e in &profile.rmse {
            let _ = write!(csv, ",{e:.8}");
            max_rmse = max_rmse.max(*e);
        }
        let _ = writeln!(csv, ",{rho:.6}");
        correlations.push(rho);
    }
    let dir = cfg.stage_dir(HALO_DIR);
    let path = dir.join(format!("halo_k{k}.csv"));
    write_text(&path, &csv)?;
    let report = HaloReport {
        components: k,
        correlations,
        max_rmse,
        csv: path.clone(),
    };
    log(&format!(
        "k = {k}: positive rank correlation for {:.1}% of {} digits",
        100.0 * report.positive_fraction(),
        report.correlations.len()
    ));
    manifest.output(&path)?;
    manifest.push("components", k);
    manifest.push("digits", report.correlations.len());
    manifest.push("positive_fraction", format!("{:.4}", report.positive_fraction()));
    manifest.write(&dir)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = Config::default();
        assert_eq!(Config::parse(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(cfg.hash(), Config::parse(&cfg.to_toml()).unwrap().hash());
    }

    #[test]
    fn sample_config_lists_the_defaults() {
        let sample = include_str!("../../../c2g.toml");
        assert_eq!(Config::parse(sample).unwrap(), Config::default());
    }

    #[test]
    fn partial_config_and_overrides() {
        let mut cfg = Config::parse("[pca]\nk_real = 3\n[student]\ndata = \"real\"\nepochs = 2\n").unwrap();
        assert_eq!(cfg.pca.k_real, 3);
        assert_eq!(cfg.pca.components, 2);
        assert_eq!(cfg.student.data, StudentData::Real);
        assert_eq!(cfg.student.epochs, 2);
        cfg.set("generator.mode=image").unwrap();
        cfg.set("teacher.max_items_per_epoch = 500").unwrap();
        cfg.set("seeds.pca_seed=9").unwrap();
        assert_eq!(cfg.generator.mode, "image");
        assert_eq!(cfg.teacher.max_items_per_epoch, Some(500));
        assert_eq!(cfg.seeds.pca_seed, 9);
        assert!(cfg.set("nope").is_err());
        assert!(cfg.set("pca.bogus=1").is_err());
        assert!(Config::parse("[pca]\nk_real = \"x\"\n").is_err());
    }

    #[test]
    fn manifest_text_round_trip() {
        let mut m = Manifest::for_stage("x", &Config::default());
        m.push("a", 1.5);
        let back = Manifest::parse(&m.render()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.get("pca_seed"), Some("2"));
    }

    #[test]
    fn worked_examples_all_pass() {
        for c in verify_examples().unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn shuffled_labels_keep_counts() {
        let items = (0..30)
            .map(|i| LabeledImage {
                image: Image::zeros(),
                label: (i % 10) as u8,
            })
            .collect();
        let ds = Dataset::new(items, Provenance::Synthetic);
        let s = shuffle_labels(&ds, 1);
        assert_eq!(s.class_counts(), ds.class_counts());
        assert_ne!(s.labels(), ds.labels());
    }

    #[test]
    fn missing_inputs_are_path_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = Config::default();
        cfg.paths.mnist_dir = dir.path().join("none");
        cfg.paths.out_dir = dir.path().join("out");
        assert!(matches!(train_teacher(&cfg, &mut |_| {}), Err(Error::Path(_))));
        assert!(matches!(train_generators(&cfg, &mut |_| {}), Err(Error::Path(_))));
        cfg.halo.components = 0;
        assert!(matches!(halo_report(&cfg, &mut |_| {}), Err(Error::Parameter(_))));
    }
}
