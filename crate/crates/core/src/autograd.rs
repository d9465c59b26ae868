//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! Every operation appends a node to a [`Tape`] and returns a [`Var`] handle.
//! Batched tensors are matrices with one sample per row; convolution and
//! pooling read each row as a `channels x height x width` block.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::linalg::matrix::gemm;
use crate::linalg::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Geometry of a square-kernel, stride-1 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub pad: usize,
    pub filters: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        self.height + 2 * self.pad + 1 - self.kernel
    }

    pub fn out_width(&self) -> usize {
        self.width + 2 * self.pad + 1 - self.kernel
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn output_len(&self) -> usize {
        self.filters * self.out_height() * self.out_width()
    }
}

/// Geometry of a 2x2, stride-2 average pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl PoolGeom {
    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn output_len(&self) -> usize {
        self.channels * (self.height / 2) * (self.width / 2)
    }
}

/// Fixed sparse linear map applied row-wise: `out[o] = sum_i w(o, i) * in[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMap {
    in_dim: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMap {
    pub fn new(in_dim: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        for (o, row) in rows.iter().enumerate() {
            if let Some(&(i, _)) = row.iter().find(|(i, _)| *i >= in_dim) {
                return Err(Error::Shape(format!("output {o} reads input {i} of {in_dim}")));
            }
        }
        Ok(SparseMap { in_dim, rows })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.rows.len()
    }

    pub fn apply(&self, input: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.in_dim);
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row.iter().map(|&(i, w)| w * input[i]).sum();
        }
    }

    fn apply_transpose_add(&self, grad_out: &[f64], grad_in: &mut [f64]) {
        for (g, row) in grad_out.iter().zip(&self.rows) {
            if *g != 0.0 {
                for &(i, w) in row {
                    grad_in[i] += w * g;
                }
            }
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Matrix,
    },
    AvgPool2(Var, PoolGeom),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Matrix,
    },
    Sparse(Var, Rc<SparseMap>),
    MeanPairwiseDistance(Var),
}

/// A value on the tape together with its accumulated gradient.
#[derive(Debug)]
pub struct Node {
    value: Matrix,
    grad: Option<Matrix>,
    requires_grad: bool,
    op: Op,
}

impl Node {
    pub fn value(&self) -> &Matrix {
        &self.value
    }

    /// Accumulated gradient; all zeros if nothing has flowed into this node.
    pub fn gradient(&self) -> Matrix {
        self.grad
            .clone()
            .unwrap_or_else(|| Matrix::zeros(self.value.rows(), self.value.cols()))
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Nodes this one was computed from.
    pub fn upstream(&self) -> Vec<Var> {
        match &self.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::MulRow(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::LeakyRelu(a, _)
            | Op::Clamp(a, _, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::AvgPool2(a, _)
            | Op::Sparse(a, _)
            | Op::MeanPairwiseDistance(a) => vec![*a],
            Op::Conv2d {
                input, weight, bias, ..
            } => vec![*input, *weight, *bias],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

/// Records operations for one forward pass and replays them backwards.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn gradient(&self, v: Var) -> Matrix {
        self.nodes[v.0].gradient()
    }

    /// Clears every accumulated gradient.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, false, Op::Leaf)
    }

    fn push(&mut self, value: Matrix, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Matrix, inputs: &[Var], op: Op) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, rg, op)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn row_operand(&self, a: Var, row: Var, what: &str) -> Result<()> {
        let (r, c) = self.value(row).shape();
        if r != 1 || c != self.value(a).cols() {
            return Err(Error::Shape(format!(
                "{what}: row operand {r}x{c} for {}x{} input",
                self.value(a).rows(),
                self.value(a).cols()
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.derived(v, &[a, b], Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).add(self.value(b))?;
        Ok(self.derived(v, &[a, b], Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.derived(v, &[a, b], Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.derived(v, &[a, b], Op::Mul(a, b)))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_operand(a, row, "add_row")?;
        let mut v = self.value(a).clone();
        let r = self.value(row).as_slice().to_vec();
        for i in 0..v.rows() {
            v.row_mut(i).iter_mut().zip(&r).for_each(|(x, b)| *x += b);
        }
        Ok(self.derived(v, &[a, row], Op::AddRow(a, row)))
    }

    /// Multiplies every row of `a` elementwise by a `1 x cols` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_operand(a, row, "mul_row")?;
        let mut v = self.value(a).clone();
        let r = self.value(row).as_slice().to_vec();
        for i in 0..v.rows() {
            v.row_mut(i).iter_mut().zip(&r).for_each(|(x, b)| *x *= b);
        }
        Ok(self.derived(v, &[a, row], Op::MulRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.derived(v, &[a], Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.derived(v, &[a], Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.derived(v, &[a], Op::Sigmoid(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.derived(v, &[a], Op::LeakyRelu(a, slope))
    }

    /// Clamps to `[lo, hi]`; gradient passes only where the input is inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.derived(v, &[a], Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.derived(v, &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = Matrix::scalar(m.sum() / m.len() as f64);
        self.derived(v, &[a], Op::Mean(a))
    }

    /// Convolution over rows of `input` (`B x C*H*W`) with `weight`
    /// (`F x C*k*k`) and `bias` (`1 x F`); output is `B x F*OH*OW`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, geom: ConvGeom) -> Result<Var> {
        let x = self.value(input);
        if x.cols() != geom.input_len() {
            return Err(Error::Shape(format!(
                "conv2d input has {} columns, geometry needs {}",
                x.cols(),
                geom.input_len()
            )));
        }
        if self.value(weight).shape() != (geom.filters, geom.patch_len()) {
            return Err(Error::Shape(format!(
                "conv2d weight is {:?}, expected {:?}",
                self.value(weight).shape(),
                (geom.filters, geom.patch_len())
            )));
        }
        if self.value(bias).shape() != (1, geom.filters) {
            return Err(Error::Shape("conv2d bias must be 1 x filters".into()));
        }
        let batch = x.rows();
        let cols = im2col(x, geom);
        let spatial = geom.out_height() * geom.out_width();
        let mut out_mat = Matrix::zeros(geom.filters, batch * spatial);
        gemm(1.0, self.value(weight), false, &cols, false, 0.0, &mut out_mat);
        let b = self.value(bias).as_slice();
        let mut out = Matrix::zeros(batch, geom.output_len());
        for (f, &bf) in b.iter().enumerate().take(geom.filters) {
            let src = out_mat.row(f);
            for s in 0..batch {
                let dst = &mut out.row_mut(s)[f * spatial..(f + 1) * spatial];
                for (d, v) in dst.iter_mut().zip(&src[s * spatial..(s + 1) * spatial]) {
                    *d = v + bf;
                }
            }
        }
        Ok(self.derived(
            out,
            &[input, weight, bias],
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            },
        ))
    }

    pub fn avg_pool2(&mut self, input: Var, geom: PoolGeom) -> Result<Var> {
        let x = self.value(input);
        if x.cols() != geom.input_len() || !geom.height.is_multiple_of(2) || !geom.width.is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "avg_pool2 input has {} columns for geometry {geom:?}",
                x.cols()
            )));
        }
        let (ph, pw) = (geom.height / 2, geom.width / 2);
        let mut out = Matrix::zeros(x.rows(), geom.output_len());
        for s in 0..x.rows() {
            let src = x.row(s);
            let dst = out.row_mut(s);
            for c in 0..geom.channels {
                let base = c * geom.height * geom.width;
                for i in 0..ph {
                    for j in 0..pw {
                        let p = base + 2 * i * geom.width + 2 * j;
                        dst[c * ph * pw + i * pw + j] =
                            0.25 * (src[p] + src[p + 1] + src[p + geom.width] + src[p + geom.width + 1]);
                    }
                }
            }
        }
        Ok(self.derived(out, &[input], Op::AvgPool2(input, geom)))
    }

    /// Mean over the batch of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        if targets.len() != z.rows() {
            return Err(Error::Shape(format!("{} targets for {} rows", targets.len(), z.rows())));
        }
        if let Some(t) = targets.iter().find(|&&t| t >= z.cols()) {
            return Err(Error::Shape(format!("target {t} out of range for {} classes", z.cols())));
        }
        let probs = softmax_rows(z);
        let loss = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -log_softmax_at(z.row(i), t))
            .sum::<f64>()
            / z.rows() as f64;
        Ok(self.derived(
            Matrix::scalar(loss),
            &[logits],
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    pub fn sparse(&mut self, input: Var, map: Rc<SparseMap>) -> Result<Var> {
        let x = self.value(input);
        if x.cols() != map.in_dim() {
            return Err(Error::Shape(format!(
                "sparse map expects {} columns, got {}",
                map.in_dim(),
                x.cols()
            )));
        }
        let mut out = Matrix::zeros(x.rows(), map.out_dim());
        for s in 0..x.rows() {
            map.apply(x.row(s), out.row_mut(s));
        }
        Ok(self.derived(out, &[input], Op::Sparse(input, map)))
    }

    /// Mean Euclidean distance over all unordered pairs of rows.
    pub fn mean_pairwise_distance(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let n = x.rows();
        if n < 2 {
            return Err(Error::Parameter(format!("pairwise distance needs at least 2 rows, got {n}")));
        }
        let mut total = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                total += distance(x.row(i), x.row(j));
            }
        }
        let pairs = (n * (n - 1) / 2) as f64;
        Ok(self.derived(Matrix::scalar(total / pairs), &[input], Op::MeanPairwiseDistance(input)))
    }

    /// Accumulates `d loss / d node` into every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        self.nodes[loss.0].grad = Some(Matrix::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            self.propagate(idx, &op, &g);
            self.nodes[idx].op = op;
            self.nodes[idx].grad = Some(g);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&mut self, v: Var, delta: Matrix) {
        let node = &mut self.nodes[v.0];
        match &mut node.grad {
            Some(g) => g.add_assign(&delta),
            None => node.grad = Some(delta),
        }
    }

    fn propagate(&mut self, idx: usize, op: &Op, g: &Matrix) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    let bv = self.value(*b);
                    let mut da = Matrix::zeros(g.rows(), bv.rows());
                    gemm(1.0, g, false, bv, true, 0.0, &mut da);
                    self.accumulate(*a, da);
                }
                if self.wants(*b) {
                    let av = self.value(*a);
                    let mut db = Matrix::zeros(av.cols(), g.cols());
                    gemm(1.0, av, true, g, false, 0.0, &mut db);
                    self.accumulate(*b, db);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    self.accumulate(*a, g.clone());
                }
                if self.wants(*b) {
                    self.accumulate(*b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    self.accumulate(*a, g.clone());
                }
                if self.wants(*b) {
                    self.accumulate(*b, g.scale(-1.0));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let d = g.zip_map(self.value(*b), |x, y| x * y).expect("shape");
                    self.accumulate(*a, d);
                }
                if self.wants(*b) {
                    let d = g.zip_map(self.value(*a), |x, y| x * y).expect("shape");
                    self.accumulate(*b, d);
                }
            }
            Op::AddRow(a, row) => {
                if self.wants(*a) {
                    self.accumulate(*a, g.clone());
                }
                if self.wants(*row) {
                    self.accumulate(*row, column_sums(g));
                }
            }
            Op::MulRow(a, row) => {
                if self.wants(*a) {
                    let r = self.value(*row).as_slice().to_vec();
                    let mut d = g.clone();
                    for i in 0..d.rows() {
                        d.row_mut(i).iter_mut().zip(&r).for_each(|(x, b)| *x *= b);
                    }
                    self.accumulate(*a, d);
                }
                if self.wants(*row) {
                    let prod = g.zip_map(self.value(*a), |x, y| x * y).expect("shape");
                    self.accumulate(*row, column_sums(&prod));
                }
            }
            Op::Scale(a, s) => {
                if self.wants(*a) {
                    self.accumulate(*a, g.scale(*s));
                }
            }
            Op::Tanh(a) => {
                if self.wants(*a) {
                    let d = g
                        .zip_map(&self.nodes[idx].value, |g, y| g * (1.0 - y * y))
                        .expect("shape");
                    self.accumulate(*a, d);
                }
            }
            Op::Sigmoid(a) => {
                if self.wants(*a) {
                    let d = g
                        .zip_map(&self.nodes[idx].value, |g, y| g * y * (1.0 - y))
                        .expect("shape");
                    self.accumulate(*a, d);
                }
            }
            Op::LeakyRelu(a, slope) => {
                if self.wants(*a) {
                    let s = *slope;
                    let d = g
                        .zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { s * g })
                        .expect("shape");
                    self.accumulate(*a, d);
                }
            }
            Op::Clamp(a, lo, hi) => {
                if self.wants(*a) {
                    let (lo, hi) = (*lo, *hi);
                    let d = g
                        .zip_map(self.value(*a), |g, x| if x >= lo && x <= hi { g } else { 0.0 })
                        .expect("shape");
                    self.accumulate(*a, d);
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    let (r, c) = self.value(*a).shape();
                    self.accumulate(*a, Matrix::filled(r, c, g.item()));
                }
            }
            Op::Mean(a) => {
                if self.wants(*a) {
                    let (r, c) = self.value(*a).shape();
                    self.accumulate(*a, Matrix::filled(r, c, g.item() / (r * c) as f64));
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            } => {
                let batch = g.rows();
                let spatial = geom.out_height() * geom.out_width();
                let mut gmat = Matrix::zeros(geom.filters, batch * spatial);
                for s in 0..batch {
                    let src = g.row(s);
                    for f in 0..geom.filters {
                        gmat.row_mut(f)[s * spatial..(s + 1) * spatial]
                            .copy_from_slice(&src[f * spatial..(f + 1) * spatial]);
                    }
                }
                if self.wants(*weight) {
                    let mut dw = Matrix::zeros(geom.filters, geom.patch_len());
                    gemm(1.0, &gmat, false, cols, true, 0.0, &mut dw);
                    self.accumulate(*weight, dw);
                }
                if self.wants(*bias) {
                    let db: Vec<f64> = (0..geom.filters).map(|f| gmat.row(f).iter().sum()).collect();
                    self.accumulate(*bias, Matrix::new(1, geom.filters, db).expect("shape"));
                }
                if self.wants(*input) {
                    let mut dcols = Matrix::zeros(geom.patch_len(), batch * spatial);
                    gemm(1.0, self.value(*weight), true, &gmat, false, 0.0, &mut dcols);
                    let dx = col2im(&dcols, *geom, batch);
                    self.accumulate(*input, dx);
                }
            }
            Op::AvgPool2(a, geom) => {
                if self.wants(*a) {
                    let (ph, pw) = (geom.height / 2, geom.width / 2);
                    let mut d = Matrix::zeros(g.rows(), geom.input_len());
                    for s in 0..g.rows() {
                        let src = g.row(s);
                        let dst = d.row_mut(s);
                        for c in 0..geom.channels {
                            let base = c * geom.height * geom.width;
                            for i in 0..ph {
                                for j in 0..pw {
                                    let v = 0.25 * src[c * ph * pw + i * pw + j];
                                    let p = base + 2 * i * geom.width + 2 * j;
                                    dst[p] += v;
                                    dst[p + 1] += v;
                                    dst[p + geom.width] += v;
                                    dst[p + geom.width + 1] += v;
                                }
                            }
                        }
                    }
                    self.accumulate(*a, d);
                }
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                if self.wants(*logits) {
                    let scale = g.item() / probs.rows() as f64;
                    let mut d = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        d[(i, t)] -= 1.0;
                    }
                    self.accumulate(*logits, d.scale(scale));
                }
            }
            Op::Sparse(a, map) => {
                if self.wants(*a) {
                    let mut d = Matrix::zeros(g.rows(), map.in_dim());
                    for s in 0..g.rows() {
                        map.apply_transpose_add(g.row(s), d.row_mut(s));
                    }
                    self.accumulate(*a, d);
                }
            }
            Op::MeanPairwiseDistance(a) => {
                if self.wants(*a) {
                    let x = self.value(*a);
                    let n = x.rows();
                    let c = g.item() / (n * (n - 1) / 2) as f64;
                    let mut d = Matrix::zeros(n, x.cols());
                    for i in 0..n {
                        for j in (i + 1)..n {
                            let dist = distance(x.row(i), x.row(j));
                            if dist == 0.0 {
                                continue;
                            }
                            for k in 0..x.cols() {
                                let u = c * (x[(i, k)] - x[(j, k)]) / dist;
                                d[(i, k)] += u;
                                d[(j, k)] -= u;
                            }
                        }
                    }
                    self.accumulate(*a, d);
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_softmax_at(row: &[f64], t: usize) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row[t] - lse
}

pub fn softmax_rows(z: &Matrix) -> Matrix {
    let mut p = z.clone();
    for i in 0..p.rows() {
        let row = p.row_mut(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    p
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut s = vec![0.0; g.cols()];
    for i in 0..g.rows() {
        s.iter_mut().zip(g.row(i)).for_each(|(a, b)| *a += b);
    }
    Matrix::new(1, g.cols(), s).expect("non-empty")
}

fn im2col(x: &Matrix, geom: ConvGeom) -> Matrix {
    let batch = x.rows();
    let (oh, ow) = (geom.out_height(), geom.out_width());
    let spatial = oh * ow;
    let k = geom.kernel;
    let pad = geom.pad as isize;
    let mut cols = Matrix::zeros(geom.patch_len(), batch * spatial);
    let width = batch * spatial;
    let data = cols.as_mut_slice();
    for s in 0..batch {
        let src = x.row(s);
        for c in 0..geom.channels {
            let plane = &src[c * geom.height * geom.width..(c + 1) * geom.height * geom.width];
            for ki in 0..k {
                for kj in 0..k {
                    let r = c * k * k + ki * k + kj;
                    let dst = &mut data[r * width + s * spatial..r * width + (s + 1) * spatial];
                    for y in 0..oh {
                        let iy = y as isize + ki as isize - pad;
                        if iy < 0 || iy >= geom.height as isize {
                            continue;
                        }
                        let line = &plane[iy as usize * geom.width..(iy as usize + 1) * geom.width];
                        for xo in 0..ow {
                            let ix = xo as isize + kj as isize - pad;
                            if ix >= 0 && ix < geom.width as isize {
                                dst[y * ow + xo] = line[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &Matrix, geom: ConvGeom, batch: usize) -> Matrix {
    let (oh, ow) = (geom.out_height(), geom.out_width());
    let spatial = oh * ow;
    let k = geom.kernel;
    let pad = geom.pad as isize;
    let width = batch * spatial;
    let data = dcols.as_slice();
    let mut dx = Matrix::zeros(batch, geom.input_len());
    for s in 0..batch {
        let dst = dx.row_mut(s);
        for c in 0..geom.channels {
            let base = c * geom.height * geom.width;
            for ki in 0..k {
                for kj in 0..k {
                    let r = c * k * k + ki * k + kj;
                    let src = &data[r * width + s * spatial..r * width + (s + 1) * spatial];
                    for y in 0..oh {
                        let iy = y as isize + ki as isize - pad;
                        if iy < 0 || iy >= geom.height as isize {
                            continue;
                        }
                        for xo in 0..ow {
                            let ix = xo as isize + kj as isize - pad;
                            if ix >= 0 && ix < geom.width as isize {
                                dst[base + iy as usize * geom.width + ix as usize] += src[y * ow + xo];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central differences of `f` at `x`, compared against `analytic`.
    /// Returns the fraction of coordinates within relative error `tol`.
    fn fd_agreement(x: &Matrix, analytic: &Matrix, f: impl Fn(&Matrix) -> f64, tol: f64) -> f64 {
        let h = 1e-5;
        let mut ok = 0;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[i] -= h;
            let num = (f(&xp) - f(&xm)) / (2.0 * h);
            let ana = analytic.as_slice()[i];
            let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-7);
            if rel <= tol {
                ok += 1;
            }
        }
        ok as f64 / x.len() as f64
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let w = t.param(Matrix::new(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let l = t.sum(w);
        t.backward(l).unwrap();
        assert_eq!(t.gradient(w), Matrix::filled(2, 3, 1.0));
    }

    #[test]
    fn squared_norm_gradient() {
        let wv = Matrix::new(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let mut t = Tape::new();
        let w = t.param(wv.clone());
        let sq = t.mul(w, w).unwrap();
        let l = t.sum(sq);
        t.backward(l).unwrap();
        assert_eq!(t.gradient(w), wv.scale(2.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let w = t.param(Matrix::zeros(2, 2));
        assert!(matches!(t.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn reset_zeroes_gradients() {
        let mut t = Tape::new();
        let w = t.param(Matrix::filled(2, 2, 3.0));
        let l = t.sum(w);
        t.backward(l).unwrap();
        t.reset_grads();
        assert_eq!(t.gradient(w), Matrix::zeros(2, 2));
        assert_eq!(t.node(l).upstream(), vec![w]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::filled(1, 2, 2.0));
        let w = t.param(Matrix::filled(1, 2, 1.0));
        let p = t.mul(c, w).unwrap();
        let l = t.sum(p);
        t.backward(l).unwrap();
        assert!(!t.node(c).requires_grad());
        assert_eq!(t.gradient(c), Matrix::zeros(1, 2));
        assert_eq!(t.gradient(w), Matrix::filled(1, 2, 2.0));
    }

    fn three_layer(x: &Matrix, w1: &Matrix, w2: &Matrix, w3: &Matrix, b: &Matrix) -> (Tape, [Var; 4], Var) {
        let mut t = Tape::new();
        let xin = t.constant(x.clone());
        let v1 = t.param(w1.clone());
        let v2 = t.param(w2.clone());
        let v3 = t.param(w3.clone());
        let vb = t.param(b.clone());
        let h = t.matmul(xin, v1).unwrap();
        let h = t.add_row(h, vb).unwrap();
        let h = t.tanh(h);
        let h = t.matmul(h, v2).unwrap();
        let h = t.leaky_relu(h, 0.2);
        let h = t.matmul(h, v3).unwrap();
        let l = t.softmax_cross_entropy(h, &[1, 0, 2]).unwrap();
        (t, [v1, v2, v3, vb], l)
    }

    #[test]
    fn three_layer_net_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&mut rng, 3, 5);
        let ws = [random(&mut rng, 5, 6), random(&mut rng, 6, 4), random(&mut rng, 4, 3), random(&mut rng, 1, 6)];
        let (mut t, vars, l) = three_layer(&x, &ws[0], &ws[1], &ws[2], &ws[3]);
        t.backward(l).unwrap();
        for (k, v) in vars.iter().enumerate() {
            let g = t.gradient(*v);
            let frac = fd_agreement(
                &ws[k],
                &g,
                |m| {
                    let mut w = ws.clone();
                    w[k] = m.clone();
                    let (t, _, l) = three_layer(&x, &w[0], &w[1], &w[2], &w[3]);
                    t.value(l).item()
                },
                1e-4,
            );
            assert!(frac >= 0.99, "param {k}: {frac}");
        }
    }

    type UnaryBuild = fn(&mut Tape, Var) -> Var;

    #[test]
    fn unary_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, 4, 6);
        let mixer = random(&mut rng, 4, 6);
        let builds: Vec<(&str, UnaryBuild)> = vec![
            ("tanh", |t, a| t.tanh(a)),
            ("sigmoid", |t, a| t.sigmoid(a)),
            ("leaky", |t, a| t.leaky_relu(a, 0.1)),
            ("scale", |t, a| t.scale(a, -2.5)),
            ("clamp", |t, a| t.clamp(a, -0.5, 0.5)),
            ("pairwise", |t, a| t.mean_pairwise_distance(a).unwrap()),
        ];
        for (name, build) in builds {
            let eval = |m: &Matrix| -> (f64, Matrix) {
                let mut t = Tape::new();
                let a = t.param(m.clone());
                let k = t.constant(mixer.clone());
                let y = build(&mut t, a);
                let y = if t.value(y).shape() == (1, 1) { y } else { t.mul(y, k).unwrap() };
                let l = t.sum(y);
                t.backward(l).unwrap();
                (t.value(l).item(), t.gradient(a))
            };
            let (_, g) = eval(&x);
            let frac = fd_agreement(&x, &g, |m| eval(m).0, 1e-4);
            assert!(frac >= 0.99, "{name}: {frac}");
        }
    }

    #[test]
    fn binary_and_reduction_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a0 = random(&mut rng, 3, 4);
        let b0 = random(&mut rng, 3, 4);
        let r0 = random(&mut rng, 1, 4);
        let mixer = random(&mut rng, 3, 4);
        let right = random(&mut rng, 4, 2);
        let eval = |a: &Matrix, b: &Matrix, r: &Matrix| -> (f64, [Matrix; 3]) {
            let mut t = Tape::new();
            let (va, vb, vr) = (t.param(a.clone()), t.param(b.clone()), t.param(r.clone()));
            let k = t.constant(mixer.clone());
            let s = t.add(va, vb).unwrap();
            let d = t.sub(s, vb).unwrap();
            let d = t.sub(d, vb).unwrap();
            let m = t.mul(d, va).unwrap();
            let m = t.add_row(m, vr).unwrap();
            let m = t.mul_row(m, vr).unwrap();
            let m = t.mul(m, k).unwrap();
            let l1 = t.mean(m);
            let rt = t.constant(right.clone());
            let mm = t.matmul(va, rt).unwrap();
            let l2 = t.sum(mm);
            let l = t.add(l1, l2).unwrap();
            t.backward(l).unwrap();
            (t.value(l).item(), [t.gradient(va), t.gradient(vb), t.gradient(vr)])
        };
        let (_, [ga, gb, gr]) = eval(&a0, &b0, &r0);
        assert!(fd_agreement(&a0, &ga, |m| eval(m, &b0, &r0).0, 1e-4) >= 0.99);
        assert!(fd_agreement(&b0, &gb, |m| eval(&a0, m, &r0).0, 1e-4) >= 0.99);
        assert!(fd_agreement(&r0, &gr, |m| eval(&a0, &b0, m).0, 1e-4) >= 0.99);
    }

    #[test]
    fn conv_pool_sparse_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let geom = ConvGeom {
            channels: 2,
            height: 6,
            width: 6,
            kernel: 3,
            pad: 1,
            filters: 3,
        };
        let pool = PoolGeom {
            channels: 3,
            height: 6,
            width: 6,
        };
        let x0 = random(&mut rng, 2, geom.input_len());
        let w0 = random(&mut rng, geom.filters, geom.patch_len());
        let b0 = random(&mut rng, 1, geom.filters);
        let map = Rc::new(
            SparseMap::new(
                pool.output_len(),
                (0..5)
                    .map(|o| vec![(o, 0.7), ((o * 5 + 3) % pool.output_len(), -1.3)])
                    .collect(),
            )
            .unwrap(),
        );
        let eval = |x: &Matrix, w: &Matrix, b: &Matrix| -> (f64, [Matrix; 3]) {
            let mut t = Tape::new();
            let (vx, vw, vb) = (t.param(x.clone()), t.param(w.clone()), t.param(b.clone()));
            let c = t.conv2d(vx, vw, vb, geom).unwrap();
            let c = t.tanh(c);
            let p = t.avg_pool2(c, pool).unwrap();
            let s = t.sparse(p, map.clone()).unwrap();
            let l = t.softmax_cross_entropy(s, &[4, 1]).unwrap();
            t.backward(l).unwrap();
            (t.value(l).item(), [t.gradient(vx), t.gradient(vw), t.gradient(vb)])
        };
        let (_, [gx, gw, gb]) = eval(&x0, &w0, &b0);
        assert!(fd_agreement(&x0, &gx, |m| eval(m, &w0, &b0).0, 1e-4) >= 0.99);
        assert!(fd_agreement(&w0, &gw, |m| eval(&x0, m, &b0).0, 1e-4) >= 0.99);
        assert!(fd_agreement(&b0, &gb, |m| eval(&x0, &w0, m).0, 1e-4) >= 0.99);
    }

    #[test]
    fn conv_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let geom = ConvGeom {
            channels: 1,
            height: 5,
            width: 5,
            kernel: 3,
            pad: 0,
            filters: 2,
        };
        let x = random(&mut rng, 1, 25);
        let w = random(&mut rng, 2, 9);
        let b = Matrix::new(1, 2, vec![0.5, -0.25]).unwrap();
        let mut t = Tape::new();
        let (vx, vw, vb) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()));
        let y = t.conv2d(vx, vw, vb, geom).unwrap();
        let out = t.value(y);
        for f in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut acc = b.as_slice()[f];
                    for ki in 0..3 {
                        for kj in 0..3 {
                            acc += w[(f, ki * 3 + kj)] * x.as_slice()[(i + ki) * 5 + j + kj];
                        }
                    }
                    assert!((out[(0, f * 9 + i * 3 + j)] - acc).abs() < 1e-12);
                }
            }
        }
    }
}
