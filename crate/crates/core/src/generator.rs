//! Class-conditional generators trained against a frozen teacher and a class
//! PCA subspace, and teacher-filtered synthesis of labeled digits.
//!
//! The generator maps `[z, onehot(class)]` through two leaky-rectifier layers
//! (128, 256) to a head whose meaning depends on the mode:
//!
//! * code mode: `k` PCA scores, `bound * tanh(.)` with `bound = 3 sqrt(lambda)`,
//!   reconstructed as `s W + mu` in the class subspace;
//! * image mode: `R * T` polar pixels through a sigmoid.
//!
//! Either way the polar image is resampled to the raster, clamped to `[0, 1]`
//! and scored by the teacher. The objective is
//! `L_distill + alpha * L_pca + beta * L_div`.

use std::path::Path;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{log_softmax_at, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mnist::{Dataset, Image, LabeledImage, Provenance, IMAGE_PIXELS, NUM_CLASSES};
use crate::nets::{images_to_matrix, FrozenTeacher};
use crate::pca::{projection_loss, score_bounds, PcaBasis};
use crate::polar::{PolarGrid, PolarImage, PolarTransform};
use crate::weights;

pub const DEFAULT_LATENT: usize = 16;
pub const HIDDEN: [usize; 2] = [128, 256];
pub const LEAK: f64 = 0.2;
/// Code-mode scores stay within this many standard deviations per component.
pub const SCORE_SCALE: f64 = 3.0;
/// Rejection sampling gives up after this many attempts per requested sample.
pub const DEFAULT_ATTEMPT_FACTOR: usize = 50;

const GEN_MAGIC: &[u8; 4] = b"C2GG";
const SYNTH_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenMode {
    Code,
    Image,
}

impl GenMode {
    fn tag(self) -> u32 {
        match self {
            GenMode::Code => 0,
            GenMode::Image => 1,
        }
    }

    fn from_tag(t: u32) -> Option<Self> {
        match t {
            0 => Some(GenMode::Code),
            1 => Some(GenMode::Image),
            _ => None,
        }
    }
}

impl std::str::FromStr for GenMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "code" => Ok(GenMode::Code),
            "image" => Ok(GenMode::Image),
            _ => Err(Error::Parameter(format!("generator mode must be \"code\" or \"image\", got {s:?}"))),
        }
    }
}

impl std::fmt::Display for GenMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GenMode::Code => "code",
            GenMode::Image => "image",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenLossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for GenLossWeights {
    fn default() -> Self {
        GenLossWeights { alpha: 1.0, beta: 0.1 }
    }
}

impl GenLossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let w = GenLossWeights { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parameter(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CondGenerator {
    mode: GenMode,
    class: usize,
    latent_dim: usize,
    grid: PolarGrid,
    params: Vec<Matrix>,
    transform: PolarTransform,
}

impl PartialEq for CondGenerator {
    fn eq(&self, other: &Self) -> bool {
        self.mode == other.mode
            && self.class == other.class
            && self.latent_dim == other.latent_dim
            && self.grid == other.grid
            && self.params == other.params
    }
}

impl CondGenerator {
    /// Xavier-initialized generator for `class`. Code mode emits `k` scores,
    /// image mode one value per polar sample of `grid`.
    pub fn init(mode: GenMode, class: usize, latent_dim: usize, k: usize, grid: PolarGrid, seed: u64) -> Result<Self> {
        check_class(class)?;
        if latent_dim == 0 {
            return Err(Error::Parameter("latent dimension must be positive".into()));
        }
        let out = match mode {
            GenMode::Code => {
                if k == 0 {
                    return Err(Error::Parameter("code mode needs at least one component".into()));
                }
                k
            }
            GenMode::Image => grid.len(),
        };
        let dims = [latent_dim + NUM_CLASSES, HIDDEN[0], HIDDEN[1], out];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(6);
        for w in dims.windows(2) {
            let a = (6.0 / (w[0] + w[1]) as f64).sqrt();
            let data = (0..w[0] * w[1]).map(|_| rng.gen_range(-a..a)).collect();
            params.push(Matrix::new(w[0], w[1], data)?);
            params.push(Matrix::zeros(1, w[1]));
        }
        Self::assemble(mode, class, latent_dim, grid, params)
    }

    fn assemble(mode: GenMode, class: usize, latent_dim: usize, grid: PolarGrid, params: Vec<Matrix>) -> Result<Self> {
        check_class(class)?;
        grid.validate()?;
        if params.len() != 6 {
            return Err(Error::Shape(format!("generator has 6 parameter tensors, got {}", params.len())));
        }
        let expect_in = [latent_dim + NUM_CLASSES, HIDDEN[0], HIDDEN[1]];
        for layer in 0..3 {
            let (w, b) = (&params[2 * layer], &params[2 * layer + 1]);
            if w.rows() != expect_in[layer] || b.shape() != (1, w.cols()) {
                return Err(Error::Shape(format!(
                    "generator layer {layer} has weight {:?} and bias {:?}",
                    w.shape(),
                    b.shape()
                )));
            }
            if layer < 2 && w.cols() != HIDDEN[layer] {
                return Err(Error::Shape(format!("hidden layer {layer} has width {}", w.cols())));
            }
        }
        if mode == GenMode::Image && params[4].cols() != grid.len() {
            return Err(Error::Shape(format!(
                "image head has {} outputs for a {}-sample polar grid",
                params[4].cols(),
                grid.len()
            )));
        }
        Ok(CondGenerator {
            mode,
            class,
            latent_dim,
            grid,
            params,
            transform: PolarTransform::new(grid)?,
        })
    }

    pub fn mode(&self) -> GenMode {
        self.mode
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn grid(&self) -> PolarGrid {
        self.grid
    }

    pub fn output_dim(&self) -> usize {
        self.params[4].cols()
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    fn check_basis(&self, basis: &PcaBasis) -> Result<()> {
        if basis.dim() != self.grid.len() {
            return Err(Error::Shape(format!(
                "basis dimension {} does not match the {}-sample polar grid",
                basis.dim(),
                self.grid.len()
            )));
        }
        if self.mode == GenMode::Code && basis.k() != self.output_dim() {
            return Err(Error::Shape(format!(
                "code head emits {} scores for a {}-component basis",
                self.output_dim(),
                basis.k()
            )));
        }
        Ok(())
    }

    /// Rows `[z, onehot(class)]`.
    fn inputs(&self, class: usize, latents: &Matrix) -> Result<Matrix> {
        check_class(class)?;
        if latents.cols() != self.latent_dim {
            return Err(Error::Shape(format!(
                "latent rows have {} entries, generator expects {}",
                latents.cols(),
                self.latent_dim
            )));
        }
        if !latents.is_finite() {
            return Err(Error::Parameter("latent vector is not finite".into()));
        }
        let width = self.latent_dim + NUM_CLASSES;
        let mut data = Vec::with_capacity(latents.rows() * width);
        for i in 0..latents.rows() {
            data.extend_from_slice(latents.row(i));
            data.extend((0..NUM_CLASSES).map(|c| if c == class { 1.0 } else { 0.0 }));
        }
        Matrix::new(latents.rows(), width, data)
    }

    /// Records generation on `tape`; returns (polar batch, raster batch).
    fn record(&self, tape: &mut Tape, params: &[Var], input: Var, basis: &PcaBasis) -> Result<(Var, Var)> {
        let mut h = input;
        for layer in 0..3 {
            h = tape.matmul(h, params[2 * layer])?;
            h = tape.add_row(h, params[2 * layer + 1])?;
            if layer < 2 {
                h = tape.leaky_relu(h, LEAK);
            }
        }
        let polar = match self.mode {
            GenMode::Code => {
                let bound = tape.constant(Matrix::row_vector(&score_bounds(basis, SCORE_SCALE))?);
                let squashed = tape.tanh(h);
                let scores = tape.mul_row(squashed, bound)?;
                let w = tape.constant(basis.components.clone());
                let offset = tape.matmul(scores, w)?;
                let mu = tape.constant(Matrix::row_vector(&basis.mean)?);
                tape.add_row(offset, mu)?
            }
            GenMode::Image => tape.sigmoid(h),
        };
        let raster = tape.sparse(polar, Rc::clone(&self.transform.inverse))?;
        let image = tape.clamp(raster, 0.0, 1.0);
        Ok((polar, image))
    }

    fn constants(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|m| tape.constant(m.clone())).collect()
    }

    /// Polar outputs for a batch of latents (one row per latent).
    pub fn generate_polar(&self, class: usize, latents: &Matrix, basis: &PcaBasis) -> Result<Vec<PolarImage>> {
        self.check_basis(basis)?;
        let mut tape = Tape::new();
        let input = tape.constant(self.inputs(class, latents)?);
        let params = self.constants(&mut tape);
        let (polar, _) = self.record(&mut tape, &params, input, basis)?;
        let p = tape.value(polar);
        (0..p.rows())
            .map(|i| PolarImage::new(self.grid, p.row(i).to_vec()))
            .collect()
    }

    pub fn generate_batch(&self, class: usize, latents: &Matrix, basis: &PcaBasis) -> Result<Vec<Image>> {
        Ok(self
            .generate_polar(class, latents, basis)?
            .iter()
            .map(|p| self.transform.from_polar(p.data()))
            .collect())
    }

    pub fn generate(&self, class: usize, z: &[f64], basis: &PcaBasis) -> Result<Image> {
        let latents = Matrix::row_vector(z)?;
        Ok(self.generate_batch(class, &latents, basis)?.remove(0))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let g = self.grid;
        let [r0, r1] = split(g.r_max);
        let [x0, x1] = split(g.center.0);
        let [y0, y1] = split(g.center.1);
        let meta = [
            self.mode.tag(),
            self.class as u32,
            self.latent_dim as u32,
            g.n_radii as u32,
            g.n_angles as u32,
            r0,
            r1,
            x0,
            x1,
            y0,
            y1,
        ];
        let refs: Vec<&Matrix> = self.params.iter().collect();
        weights::encode(GEN_MAGIC, &meta, &refs)
    }

    pub fn from_bytes(bytes: &[u8], name: &str) -> Result<Self> {
        let (meta, params) = weights::decode(bytes, GEN_MAGIC, name)?;
        if meta.len() != 11 {
            return Err(Error::format(name, format!("expected 11 header words, got {}", meta.len())));
        }
        let mode = GenMode::from_tag(meta[0]).ok_or_else(|| Error::format(name, format!("unknown mode {}", meta[0])))?;
        let grid = PolarGrid {
            n_radii: meta[3] as usize,
            n_angles: meta[4] as usize,
            r_max: join(meta[5], meta[6]),
            center: (join(meta[7], meta[8]), join(meta[9], meta[10])),
        };
        Self::assemble(mode, meta[1] as usize, meta[2] as usize, grid, params).map_err(|e| Error::format(name, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        weights::write(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&weights::read(path)?, &path.display().to_string())
    }
}

fn split(v: f64) -> [u32; 2] {
    let b = v.to_bits();
    [b as u32, (b >> 32) as u32]
}

fn join(lo: u32, hi: u32) -> f64 {
    f64::from_bits(u64::from(lo) | (u64::from(hi) << 32))
}

fn check_class(class: usize) -> Result<()> {
    if class >= NUM_CLASSES {
        return Err(Error::Parameter(format!("class {class} is outside 0..{NUM_CLASSES}")));
    }
    Ok(())
}

/// `n x latent` matrix of draws from the uniform prior on `[-1, 1]`.
pub fn sample_latents<R: Rng + ?Sized>(n: usize, latent_dim: usize, rng: &mut R) -> Matrix {
    let data = (0..n * latent_dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    Matrix::new(n, latent_dim, data).expect("non-empty latent batch")
}

/// Cross-entropy of `softmax(logits)` against `class`.
pub fn loss_distill(logits: &[f64], class: usize) -> f64 {
    -log_softmax_at(logits, class)
}

/// Projection loss of a flattened polar image against the class basis.
pub fn loss_pca(x: &PolarImage, basis: &PcaBasis) -> Result<f64> {
    projection_loss(basis, x.data())
}

/// Negative mean pairwise L2 distance between images, divided by `sqrt(d)`.
pub fn loss_div(batch: &[Image]) -> Result<f64> {
    let rows: Vec<&[f64]> = batch.iter().map(Image::pixels).collect();
    loss_div_rows(&rows)
}

pub(crate) fn loss_div_rows(rows: &[&[f64]]) -> Result<f64> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Parameter(format!("diversity needs at least 2 images, got {n}")));
    }
    let d = rows[0].len() as f64;
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            total += rows[i]
                .iter()
                .zip(rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
        }
    }
    Ok(-total / (n * (n - 1) / 2) as f64 / d.sqrt())
}

/// The three objective terms and their weighted sum, all batch means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub distill: f64,
    pub pca: f64,
    pub div: f64,
}

/// Records the full objective for one batch; returns the scalar loss, the
/// term nodes and the generator parameter handles.
fn record_objective(
    g: &CondGenerator,
    tape: &mut Tape,
    teacher: &FrozenTeacher,
    basis: &PcaBasis,
    w: GenLossWeights,
    latents: &Matrix,
) -> Result<(Var, [Var; 3], Vec<Var>)> {
    let input = tape.constant(g.inputs(g.class, latents)?);
    let params: Vec<Var> = g.params.iter().map(|m| tape.param(m.clone())).collect();
    let (polar, image) = g.record(tape, &params, input, basis)?;
    let (logits, _) = teacher.forward_on_tape(tape, image, false)?;
    let targets = vec![g.class; latents.rows()];
    let distill = tape.softmax_cross_entropy(logits, &targets)?;

    let neg_mu = tape.constant(Matrix::row_vector(&basis.mean.iter().map(|m| -m).collect::<Vec<_>>())?);
    let centered = tape.add_row(polar, neg_mu)?;
    let wt = tape.constant(basis.components.transpose());
    let wc = tape.constant(basis.components.clone());
    let scores = tape.matmul(centered, wt)?;
    let proj = tape.matmul(scores, wc)?;
    let resid = tape.sub(centered, proj)?;
    let sq = tape.mul(resid, resid)?;
    let pca = tape.mean(sq);

    let spread = tape.mean_pairwise_distance(image)?;
    let div = tape.scale(spread, -1.0 / (IMAGE_PIXELS as f64).sqrt());

    let a = tape.scale(pca, w.alpha);
    let b = tape.scale(div, w.beta);
    let ab = tape.add(a, b)?;
    let total = tape.add(distill, ab)?;
    Ok((total, [distill, pca, div], params))
}

/// Objective value for a batch of latents, computed on the tape.
pub fn objective(
    g: &CondGenerator,
    teacher: &FrozenTeacher,
    basis: &PcaBasis,
    w: GenLossWeights,
    latents: &Matrix,
) -> Result<LossTerms> {
    g.check_basis(basis)?;
    let mut tape = Tape::new();
    let (total, [d, p, v], _) = record_objective(g, &mut tape, teacher, basis, w, latents)?;
    Ok(LossTerms {
        total: tape.value(total).item(),
        distill: tape.value(d).item(),
        pca: tape.value(p).item(),
        div: tape.value(v).item(),
    })
}

/// Objective value recomputed from the standalone loss functions.
pub fn objective_reference(
    g: &CondGenerator,
    teacher: &FrozenTeacher,
    basis: &PcaBasis,
    w: GenLossWeights,
    latents: &Matrix,
) -> Result<LossTerms> {
    let polar = g.generate_polar(g.class, latents, basis)?;
    let images = g.generate_batch(g.class, latents, basis)?;
    let logits = teacher.forward(&images_to_matrix(&images))?;
    let n = latents.rows() as f64;
    let distill = (0..logits.rows()).map(|i| loss_distill(logits.row(i), g.class)).sum::<f64>() / n;
    let pca = polar.iter().map(|p| loss_pca(p, basis)).sum::<Result<f64>>()? / n;
    let div = loss_div(&images)?;
    Ok(LossTerms {
        total: distill + w.alpha * pca + w.beta * div,
        distill,
        pca,
        div,
    })
}

/// Gradient of the objective with respect to every generator parameter.
pub fn objective_gradient(
    g: &CondGenerator,
    teacher: &FrozenTeacher,
    basis: &PcaBasis,
    w: GenLossWeights,
    latents: &Matrix,
) -> Result<Vec<Matrix>> {
    g.check_basis(basis)?;
    let mut tape = Tape::new();
    let (total, _, params) = record_objective(g, &mut tape, teacher, basis, w, latents)?;
    tape.backward(total)?;
    Ok(params.iter().map(|&p| tape.gradient(p)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenTrainConfig {
    pub mode: GenMode,
    pub latent_dim: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub weights: GenLossWeights,
}

impl Default for GenTrainConfig {
    fn default() -> Self {
        GenTrainConfig {
            mode: GenMode::Code,
            latent_dim: DEFAULT_LATENT,
            steps: 200,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 3,
            weights: GenLossWeights::default(),
        }
    }
}

impl GenTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size < 2 {
            return Err(Error::Parameter("generator batch size must be at least 2".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Parameter(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Parameter(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenStepStats {
    pub step: usize,
    pub terms: LossTerms,
}

/// Trains a fresh generator for `class` by SGD with momentum. The teacher is
/// only ever read.
pub fn train_generator(
    class: usize,
    teacher: &FrozenTeacher,
    basis: &PcaBasis,
    grid: PolarGrid,
    cfg: &GenTrainConfig,
) -> Result<(CondGenerator, Vec<GenStepStats>)> {
    cfg.validate()?;
    let seed = cfg.seed ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut g = CondGenerator::init(cfg.mode, class, cfg.latent_dim, basis.k(), grid, seed)?;
    g.check_basis(basis)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut velocity: Vec<Matrix> = g.params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let latents = sample_latents(cfg.batch_size, cfg.latent_dim, &mut rng);
        let mut tape = Tape::new();
        let (total, [d, p, v], params) = record_objective(&g, &mut tape, teacher, basis, cfg.weights, &latents)?;
        let terms = LossTerms {
            total: tape.value(total).item(),
            distill: tape.value(d).item(),
            pca: tape.value(p).item(),
            div: tape.value(v).item(),
        };
        if !terms.total.is_finite() {
            return Err(Error::Divergence {
                model: format!("generator for class {class}"),
                epoch: 0,
                step,
            });
        }
        tape.backward(total)?;
        for ((param, vel), var) in g.params.iter_mut().zip(&mut velocity).zip(&params) {
            let grad = tape.gradient(*var);
            for ((pv, vv), gv) in param.as_mut_slice().iter_mut().zip(vel.as_mut_slice()).zip(grad.as_slice()) {
                *vv = cfg.momentum * *vv - cfg.learning_rate * gv;
                *pv += *vv;
            }
        }
        history.push(GenStepStats { step, terms });
    }
    Ok((g, history))
}

/// Fraction of `n` fresh quantized samples the teacher assigns to the
/// generator's class.
pub fn acceptance_rate(g: &CondGenerator, teacher: &FrozenTeacher, basis: &PcaBasis, n: usize, seed: u64) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latents = sample_latents(n, g.latent_dim, &mut rng);
    let images: Vec<Image> = g.generate_batch(g.class, &latents, basis)?.iter().map(Image::quantized).collect();
    let hits = teacher.predict_batch(&images).iter().filter(|&&p| p == g.class).count();
    Ok(hits as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassYield {
    pub class: usize,
    pub accepted: usize,
    pub attempts: usize,
}

impl ClassYield {
    pub fn rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.accepted as f64 / self.attempts as f64
        }
    }
}

/// Draws samples per class until `n_per_class` of them are assigned to their
/// class by the teacher. Images are quantized to bytes before the check so
/// the retained items are exactly what an IDX file stores.
pub fn synthesize_dataset(
    gens: &[CondGenerator],
    teacher: &FrozenTeacher,
    bases: &[PcaBasis],
    n_per_class: usize,
    seed: u64,
    attempt_factor: usize,
) -> Result<(Dataset, Vec<ClassYield>)> {
    if gens.len() != NUM_CLASSES || bases.len() != NUM_CLASSES {
        return Err(Error::Parameter(format!(
            "synthesis needs {NUM_CLASSES} generators and bases, got {} and {}",
            gens.len(),
            bases.len()
        )));
    }
    let cap = n_per_class.saturating_mul(attempt_factor);
    let mut items = Vec::with_capacity(n_per_class * NUM_CLASSES);
    let mut yields = Vec::with_capacity(NUM_CLASSES);
    for (class, (g, basis)) in gens.iter().zip(bases).enumerate() {
        if g.class() != class {
            return Err(Error::Parameter(format!("generator {class} was trained for class {}", g.class())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let (mut accepted, mut attempts) = (0, 0);
        while accepted < n_per_class {
            if attempts >= cap {
                return Err(Error::Starvation {
                    class,
                    accepted,
                    attempts,
                    rate: accepted as f64 / attempts.max(1) as f64,
                });
            }
            let batch = SYNTH_BATCH.min(cap - attempts);
            let latents = sample_latents(batch, g.latent_dim(), &mut rng);
            let images: Vec<Image> = g.generate_batch(class, &latents, basis)?.iter().map(Image::quantized).collect();
            let preds = teacher.predict_batch(&images);
            for (img, p) in images.into_iter().zip(preds) {
                if accepted == n_per_class {
                    break;
                }
                attempts += 1;
                if p == class {
                    accepted += 1;
                    items.push(LabeledImage {
                        image: img,
                        label: class as u8,
                    });
                }
            }
        }
        yields.push(ClassYield {
            class,
            accepted,
            attempts,
        });
    }
    Ok((Dataset::new(items, Provenance::Synthetic), yields))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::LeNet5;
    use crate::pca::{class_mean_basis, project, randomize_scores};

    fn grid() -> PolarGrid {
        PolarGrid::default()
    }

    fn toy_basis(k: usize, seed: u64) -> PcaBasis {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<PolarImage> = (0..4)
            .map(|_| PolarImage::new(grid(), (0..grid().len()).map(|_| rng.gen_range(0.0..0.6)).collect()).unwrap())
            .collect();
        class_mean_basis(&samples, k).unwrap()
    }

    fn teacher() -> FrozenTeacher {
        LeNet5::init(42).freeze()
    }

    #[test]
    fn zero_head_reproduces_class_mean() {
        let basis = toy_basis(2, 1);
        let mut g = CondGenerator::init(GenMode::Code, 3, 16, 2, grid(), 5).unwrap();
        g.params_mut()[4] = Matrix::zeros(256, 2);
        let img = g.generate(3, &[0.3; 16], &basis).unwrap();
        let mean = PolarImage::new(grid(), basis.mean.clone()).unwrap();
        assert_eq!(img, crate::polar::from_polar(&mean));
    }

    #[test]
    fn generation_is_deterministic_and_bounded() {
        let basis = toy_basis(2, 2);
        for mode in [GenMode::Code, GenMode::Image] {
            let g = CondGenerator::init(mode, 1, 16, 2, grid(), 9).unwrap();
            let z: Vec<f64> = (0..16).map(|i| (i as f64 / 8.0) - 1.0).collect();
            let a = g.generate(1, &z, &basis).unwrap();
            assert_eq!(a, g.generate(1, &z, &basis).unwrap());
            assert!(a.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
            let polar = g.generate_polar(1, &Matrix::row_vector(&z).unwrap(), &basis).unwrap();
            if mode == GenMode::Image {
                assert!(polar[0].data().iter().all(|p| (0.0..=1.0).contains(p)));
            }
        }
    }

    #[test]
    fn code_mode_output_stays_in_subspace_and_bounds() {
        let basis = toy_basis(3, 4);
        let g = CondGenerator::init(GenMode::Code, 0, 16, 3, grid(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let bounds = score_bounds(&basis, SCORE_SCALE);
        for p in g.generate_polar(0, &sample_latents(20, 16, &mut rng), &basis).unwrap() {
            assert!(loss_pca(&p, &basis).unwrap() < 1e-20);
            for (s, b) in project(&basis, p.data()).unwrap().iter().zip(&bounds) {
                assert!(s.abs() <= b + 1e-9);
            }
        }
        let z = randomize_scores(&basis, SCORE_SCALE, 3).unwrap();
        let x = crate::pca::reconstruct(&basis, &z).unwrap();
        assert!(projection_loss(&basis, &x).unwrap() < 1e-20);
    }

    #[test]
    fn class_out_of_range() {
        let basis = toy_basis(2, 2);
        assert!(matches!(
            CondGenerator::init(GenMode::Code, 10, 16, 2, grid(), 1),
            Err(Error::Parameter(_))
        ));
        let g = CondGenerator::init(GenMode::Code, 2, 16, 2, grid(), 1).unwrap();
        assert!(matches!(g.generate(11, &[0.0; 16], &basis), Err(Error::Parameter(_))));
    }

    #[test]
    fn distill_loss_values() {
        let mut hot = [0.0; 10];
        hot[4] = 1e3;
        assert!(loss_distill(&hot, 4) < 1e-6);
        assert!((loss_distill(&[0.0; 10], 2) - 10f64.ln()).abs() < 1e-12);
        assert!((loss_distill(&hot, 0) - 1000.0).abs() < 1e-6);
    }

    #[test]
    fn diversity_loss_values() {
        let a = Image::zeros();
        let mut b = Image::zeros();
        b.set(5, 5, 1.0);
        assert!((loss_div(&[a.clone(), b.clone()]).unwrap() + 1.0 / 28.0).abs() < 1e-15);
        assert_eq!(loss_div(&[a.clone(), a.clone(), a.clone()]).unwrap(), 0.0);
        assert!(matches!(loss_div(&[a]), Err(Error::Parameter(_))));
    }

    #[test]
    fn objective_is_the_weighted_sum_of_its_terms() {
        let basis = toy_basis(2, 6);
        let t = teacher();
        let w = GenLossWeights::new(0.7, 0.3).unwrap();
        for mode in [GenMode::Code, GenMode::Image] {
            let g = CondGenerator::init(mode, 5, 16, 2, grid(), 2).unwrap();
            let z = sample_latents(6, 16, &mut ChaCha8Rng::seed_from_u64(1));
            let tape = objective(&g, &t, &basis, w, &z).unwrap();
            let reference = objective_reference(&g, &t, &basis, w, &z).unwrap();
            assert!((tape.total - (tape.distill + w.alpha * tape.pca + w.beta * tape.div)).abs() < 1e-10);
            assert!((tape.total - reference.total).abs() < 1e-10, "{tape:?} {reference:?}");
            assert!((tape.distill - reference.distill).abs() < 1e-10);
            assert!((tape.pca - reference.pca).abs() < 1e-10);
            assert!((tape.div - reference.div).abs() < 1e-10);
        }
    }

    #[test]
    fn training_leaves_teacher_untouched_and_is_deterministic() {
        let basis = toy_basis(2, 7);
        let t = teacher();
        let before = t.checksum();
        let cfg = GenTrainConfig {
            steps: 4,
            batch_size: 8,
            ..GenTrainConfig::default()
        };
        let (a, ha) = train_generator(2, &t, &basis, grid(), &cfg).unwrap();
        let (b, hb) = train_generator(2, &t, &basis, grid(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert_eq!(t.checksum(), before);
        assert!(ha.iter().all(|s| s.terms.pca < 1e-20));
    }

    #[test]
    fn file_round_trip_and_errors() {
        let basis = toy_basis(2, 3);
        let g = CondGenerator::init(GenMode::Image, 6, 8, 2, grid(), 4).unwrap();
        let back = CondGenerator::from_bytes(&g.to_bytes(), "g").unwrap();
        assert_eq!(back.mode(), GenMode::Image);
        assert_eq!(back.class(), 6);
        assert_eq!(back.grid(), g.grid());
        let z = [0.25; 8];
        let (x, y) = (g.generate(6, &z, &basis).unwrap(), back.generate(6, &z, &basis).unwrap());
        let diff = x.pixels().iter().zip(y.pixels()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-5);
        let bytes = g.to_bytes();
        assert!(matches!(CondGenerator::from_bytes(&bytes[..100], "t"), Err(Error::Format { .. })));
        assert!(matches!(
            CondGenerator::from_bytes(&LeNet5::zeros().to_bytes(), "w"),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn synthesis_filter_and_starvation() {
        let basis = toy_basis(2, 5);
        let bases = vec![basis; 10];
        // Teacher that always answers 7.
        let mut net = LeNet5::zeros();
        net.params_mut()[9][(0, 7)] = 10.0;
        let t = net.freeze();
        let gens: Vec<CondGenerator> = (0..10)
            .map(|c| CondGenerator::init(GenMode::Code, c, 16, 2, grid(), c as u64).unwrap())
            .collect();
        let (empty, _) = synthesize_dataset(&gens, &t, &bases, 0, 1, 50).unwrap();
        assert!(empty.is_empty());
        match synthesize_dataset(&gens, &t, &bases, 3, 1, 50) {
            Err(Error::Starvation {
                class: 0,
                accepted: 0,
                attempts: 150,
                ..
            }) => {}
            other => panic!("{other:?}"),
        }
        // Always-correct filter only possible with one class; check class 7 alone.
        let g = &gens[7];
        assert_eq!(acceptance_rate(g, &t, &bases[7], 10, 2).unwrap(), 1.0);
    }
}
