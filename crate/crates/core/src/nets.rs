//! LeNet-5 for 28x28 digits: supervised training, inference and weight files.
//!
//! Layout: conv 6@5x5 (pad 2) -> tanh -> avg-pool 2x2 -> conv 16@5x5 ->
//! tanh -> avg-pool 2x2 -> fc 400->120 -> tanh -> fc 120->84 -> tanh ->
//! fc 84->10.

use std::ops::Deref;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::autograd::{ConvGeom, PoolGeom, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mnist::{Dataset, Image, IMAGE_PIXELS, IMAGE_SIDE, NUM_CLASSES};
use crate::weights;

const CONV1: ConvGeom = ConvGeom {
    channels: 1,
    height: IMAGE_SIDE,
    width: IMAGE_SIDE,
    kernel: 5,
    pad: 2,
    filters: 6,
};
const POOL1: PoolGeom = PoolGeom {
    channels: 6,
    height: 28,
    width: 28,
};
const CONV2: ConvGeom = ConvGeom {
    channels: 6,
    height: 14,
    width: 14,
    kernel: 5,
    pad: 0,
    filters: 16,
};
const POOL2: PoolGeom = PoolGeom {
    channels: 16,
    height: 10,
    width: 10,
};

/// (rows, cols) of every parameter tensor, in storage order.
pub const PARAM_SHAPES: [(usize, usize); 10] = [
    (6, 25),
    (1, 6),
    (16, 150),
    (1, 16),
    (400, 120),
    (1, 120),
    (120, 84),
    (1, 84),
    (84, 10),
    (1, 10),
];

const WEIGHT_MAGIC: &[u8; 4] = b"C2GW";
const EVAL_BATCH: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct LeNet5 {
    params: Vec<Matrix>,
}

impl LeNet5 {
    /// Xavier-uniform weights and zero biases.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fans = [(25, 150), (150, 400), (400, 120), (120, 84), (84, 10)];
        let params = PARAM_SHAPES
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| {
                if i % 2 == 1 {
                    Matrix::zeros(r, c)
                } else {
                    let (fi, fo) = fans[i / 2];
                    let a = (6.0 / (fi + fo) as f64).sqrt();
                    Matrix::new(r, c, (0..r * c).map(|_| rng.gen_range(-a..a)).collect()).expect("shape")
                }
            })
            .collect();
        LeNet5 { params }
    }

    pub fn zeros() -> Self {
        LeNet5 {
            params: PARAM_SHAPES.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn from_params(params: Vec<Matrix>) -> Result<Self> {
        if params.len() != PARAM_SHAPES.len() {
            return Err(Error::Shape(format!("LeNet-5 has 10 parameter tensors, got {}", params.len())));
        }
        for (i, (p, &s)) in params.iter().zip(&PARAM_SHAPES).enumerate() {
            if p.shape() != s {
                return Err(Error::Shape(format!("parameter {i} is {:?}, expected {s:?}", p.shape())));
            }
        }
        Ok(LeNet5 { params })
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Matrix::len).sum()
    }

    /// Records the forward pass of `input` (`B x 784`) on `tape`. Returns the
    /// logits and the parameter handles; parameters are constants unless
    /// `trainable`.
    pub fn forward_on_tape(&self, tape: &mut Tape, input: Var, trainable: bool) -> Result<(Var, Vec<Var>)> {
        if tape.value(input).cols() != IMAGE_PIXELS {
            return Err(Error::Shape(format!(
                "LeNet-5 input must have {IMAGE_PIXELS} columns, got {}",
                tape.value(input).cols()
            )));
        }
        let p: Vec<Var> = self
            .params
            .iter()
            .map(|m| if trainable { tape.param(m.clone()) } else { tape.constant(m.clone()) })
            .collect();
        let h = tape.conv2d(input, p[0], p[1], CONV1)?;
        let h = tape.tanh(h);
        let h = tape.avg_pool2(h, POOL1)?;
        let h = tape.conv2d(h, p[2], p[3], CONV2)?;
        let h = tape.tanh(h);
        let h = tape.avg_pool2(h, POOL2)?;
        let h = tape.matmul(h, p[4])?;
        let h = tape.add_row(h, p[5])?;
        let h = tape.tanh(h);
        let h = tape.matmul(h, p[6])?;
        let h = tape.add_row(h, p[7])?;
        let h = tape.tanh(h);
        let h = tape.matmul(h, p[8])?;
        let logits = tape.add_row(h, p[9])?;
        Ok((logits, p))
    }

    /// Logits for a `B x 784` batch.
    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let (logits, _) = self.forward_on_tape(&mut tape, x, false)?;
        Ok(tape.value(logits).clone())
    }

    pub fn predict_class(&self, img: &Image) -> usize {
        self.predict_batch(std::slice::from_ref(img))[0]
    }

    pub fn predict_batch(&self, images: &[Image]) -> Vec<usize> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(EVAL_BATCH) {
            let logits = self.forward(&images_to_matrix(chunk)).expect("images are 28x28");
            out.extend((0..logits.rows()).map(|i| argmax(logits.row(i))));
        }
        out
    }

    pub fn accuracy(&self, ds: &Dataset) -> f64 {
        if ds.is_empty() {
            return 0.0;
        }
        let images: Vec<Image> = ds.items.iter().map(|i| i.image.clone()).collect();
        let pred = self.predict_batch(&images);
        let correct = pred
            .iter()
            .zip(&ds.items)
            .filter(|(p, it)| **p == it.label as usize)
            .count();
        correct as f64 / ds.len() as f64
    }

    /// SHA-256 over the little-endian bits of every parameter.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            for v in p.as_slice() {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let refs: Vec<&Matrix> = self.params.iter().collect();
        weights::encode(WEIGHT_MAGIC, &[], &refs)
    }

    pub fn from_bytes(bytes: &[u8], name: &str) -> Result<Self> {
        let (_, tensors) = weights::decode(bytes, WEIGHT_MAGIC, name)?;
        LeNet5::from_params(tensors).map_err(|e| Error::format(name, e.to_string()))
    }

    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        weights::write(path.as_ref(), &self.to_bytes())
    }

    pub fn load_weights(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        LeNet5::from_bytes(&weights::read(path)?, &path.display().to_string())
    }

    pub fn freeze(self) -> FrozenTeacher {
        FrozenTeacher(self)
    }
}

/// Read-only handle to a trained classifier.
#[derive(Debug, Clone)]
pub struct FrozenTeacher(LeNet5);

impl FrozenTeacher {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(LeNet5::load_weights(path)?.freeze())
    }
}

impl Deref for FrozenTeacher {
    type Target = LeNet5;

    fn deref(&self) -> &LeNet5 {
        &self.0
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn images_to_matrix(images: &[Image]) -> Matrix {
    let mut data = Vec::with_capacity(images.len() * IMAGE_PIXELS);
    for img in images {
        data.extend_from_slice(img.pixels());
    }
    Matrix::new(images.len(), IMAGE_PIXELS, data).expect("non-empty batch")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Train on only the first `n` items of each shuffled epoch.
    pub max_items_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 1,
            max_items_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be positive".into()));
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
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Mini-batch SGD with momentum on softmax cross-entropy.
pub fn train_supervised(net: &mut LeNet5, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochStats>> {
    train_supervised_with(net, data, cfg, |_| {})
}

pub fn train_supervised_with(
    net: &mut LeNet5,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity: Vec<Matrix> = net.params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let used = cfg.max_items_per_epoch.unwrap_or(order.len()).min(order.len());
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order[..used].chunks(cfg.batch_size) {
            let images: Vec<Image> = batch.iter().map(|&i| data.items[i].image.clone()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| data.items[i].label as usize).collect();
            let mut tape = Tape::new();
            let x = tape.constant(images_to_matrix(&images));
            let (logits, params) = net.forward_on_tape(&mut tape, x, true)?;
            let loss = tape.softmax_cross_entropy(logits, &labels)?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Divergence {
                    model: "LeNet-5".into(),
                    epoch,
                    step,
                });
            }
            let z = tape.value(logits);
            correct += (0..z.rows()).filter(|&i| argmax(z.row(i)) == labels[i]).count();
            loss_sum += lv * batch.len() as f64;
            tape.backward(loss)?;
            for ((p, v), var) in net.params.iter_mut().zip(&mut velocity).zip(&params) {
                let g = tape.gradient(*var);
                for ((pv, vv), gv) in p.as_mut_slice().iter_mut().zip(v.as_mut_slice()).zip(g.as_slice()) {
                    *vv = cfg.momentum * *vv - cfg.learning_rate * gv;
                    *pv += *vv;
                }
            }
            step += 1;
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / used as f64,
            accuracy: correct as f64 / used as f64,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}

/// Training log as CSV with header `epoch,loss,accuracy`.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,loss,accuracy\n");
    for h in history {
        s.push_str(&format!("{},{:.6},{:.6}\n", h.epoch, h.loss, h.accuracy));
    }
    s
}

/// Softmax probabilities of a single logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = Matrix::row_vector(logits).expect("non-empty logits");
    crate::autograd::softmax_rows(&m).into_vec()
}

pub const CLASSES: usize = NUM_CLASSES;
