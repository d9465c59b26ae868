//! Principal component bases: fitting, projection, reconstruction, the
//! projection loss, and per-class subspaces over polar images.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{covariance, fix_sign, mean_center, symmetric_eigen, Matrix};
use crate::mnist::NUM_CLASSES;
use crate::polar::{PolarGrid, PolarImage};

/// Eigenvalues at or below this fraction of the largest one count as zero.
const RANK_TOL: f64 = 1e-10;

/// Mean, principal directions (rows of `components`) and their variances.
///
/// Requested components beyond the rank of the data are zero rows with zero
/// eigenvalue, so they never affect projection or reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    pub components: Matrix,
    pub eigenvalues: Vec<f64>,
    pub n_samples: usize,
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.rows()
    }

    /// Number of components carrying nonzero variance.
    pub fn rank(&self) -> usize {
        self.eigenvalues.iter().filter(|&&l| l > 0.0).count()
    }

    fn check_len(&self, x: &[f64], what: &str) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!("{what} has length {}, basis dimension is {}", x.len(), self.dim())));
        }
        Ok(())
    }
}

/// Fits a `k`-component basis to the rows of `samples`.
///
/// When there are fewer observations than dimensions the eigenproblem is
/// solved on the `n x n` Gram matrix and mapped back, which yields the same
/// nonzero spectrum and directions as the `d x d` covariance.
pub fn fit(samples: &Matrix, k: usize) -> Result<PcaBasis> {
    let (n, d) = samples.shape();
    if n < 2 {
        return Err(Error::DegenerateSample(format!("PCA needs at least 2 samples, got {n}")));
    }
    if k == 0 || k > d {
        return Err(Error::Parameter(format!("component count must be in 1..={d}, got {k}")));
    }
    let (centered, mean) = mean_center(samples);
    let (eigenvalues, directions) = if n - 1 < d {
        gram_route(&centered)?
    } else {
        covariance_route(&centered)?
    };
    assemble(mean, eigenvalues, directions, k, n)
}

/// Eigenpairs of the `d x d` covariance; directions are rows.
pub fn covariance_route(centered: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let e = symmetric_eigen(&covariance(centered)?)?;
    Ok((e.eigenvalues, e.eigenvectors))
}

/// Eigenpairs from the `n x n` Gram matrix `X X^T / (n - 1)`, mapped to
/// unit directions `X^T u / |X^T u|`. Only nonzero eigenvalues are returned.
pub fn gram_route(centered: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = centered.rows();
    let d = centered.cols();
    let gram = centered
        .matmul(&centered.transpose())?
        .scale(1.0 / (n as f64 - 1.0));
    let mut sym = gram.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (gram[(i, j)] + gram[(j, i)]);
            sym[(i, j)] = m;
            sym[(j, i)] = m;
        }
    }
    let e = symmetric_eigen(&sym)?;
    let top = e.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let mut values = Vec::new();
    let mut dirs = Vec::new();
    for (i, &l) in e.eigenvalues.iter().enumerate() {
        if !(l > RANK_TOL * top && l > 0.0) {
            break;
        }
        let u = Matrix::row_vector(e.eigenvectors.row(i))?;
        let mut v = u.matmul(centered)?.into_vec();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        fix_sign(&mut v);
        values.push(l);
        dirs.extend(v);
    }
    if values.is_empty() {
        return Ok((Vec::new(), Matrix::zeros(1, d)));
    }
    let rows = values.len();
    Ok((values, Matrix::new(rows, d, dirs)?))
}

fn assemble(mean: Vec<f64>, eigenvalues: Vec<f64>, directions: Matrix, k: usize, n: usize) -> Result<PcaBasis> {
    let d = mean.len();
    let top = eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let mut components = Matrix::zeros(k, d);
    let mut kept = vec![0.0; k];
    for i in 0..k.min(eigenvalues.len()) {
        let l = eigenvalues[i];
        if l > RANK_TOL * top && l > 0.0 {
            components.row_mut(i).copy_from_slice(directions.row(i));
            kept[i] = l;
        } else {
            break;
        }
    }
    Ok(PcaBasis {
        mean,
        components,
        eigenvalues: kept,
        n_samples: n,
    })
}

/// Scores `(x - mu) W^T`.
pub fn project(basis: &PcaBasis, x: &[f64]) -> Result<Vec<f64>> {
    basis.check_len(x, "sample")?;
    Ok((0..basis.k())
        .map(|i| {
            basis
                .components
                .row(i)
                .iter()
                .zip(x.iter().zip(&basis.mean))
                .map(|(w, (xv, m))| w * (xv - m))
                .sum()
        })
        .collect())
}

/// `z W + mu`.
pub fn reconstruct(basis: &PcaBasis, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != basis.k() {
        return Err(Error::Shape(format!("{} scores for a {}-component basis", z.len(), basis.k())));
    }
    let mut out = basis.mean.clone();
    for (i, &zi) in z.iter().enumerate() {
        if zi != 0.0 {
            out.iter_mut()
                .zip(basis.components.row(i))
                .for_each(|(o, w)| *o += zi * w);
        }
    }
    Ok(out)
}

/// Mean squared residual of `x` against its reconstruction from the basis.
pub fn projection_loss(basis: &PcaBasis, x: &[f64]) -> Result<f64> {
    let r = reconstruct(basis, &project(basis, x)?)?;
    Ok(x.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64)
}

/// PCA within one polar image: each radius row is an observation of `T`
/// angular samples.
pub fn radial_segment_pca(p: &PolarImage, k: usize) -> Result<PcaBasis> {
    let m = Matrix::new(p.grid.n_radii, p.grid.n_angles, p.data().to_vec())?;
    fit(&m, k)
}

/// Reconstructs every radius row of `p` through its own radial-segment basis.
pub fn radial_segment_reconstruction(p: &PolarImage, basis: &PcaBasis) -> Result<PolarImage> {
    let mut out = Vec::with_capacity(p.data().len());
    for r in 0..p.grid.n_radii {
        out.extend(reconstruct(basis, &project(basis, p.row(r))?)?);
    }
    PolarImage::new(p.grid, out)
}

/// Basis over flattened polar samples of one class; its mean is the
/// class-mean polar image.
pub fn class_mean_basis(samples: &[PolarImage], k: usize) -> Result<PcaBasis> {
    if samples.len() < 2 {
        return Err(Error::DegenerateSample(format!(
            "a class basis needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let grid = samples[0].grid;
    if samples.iter().any(|s| s.grid != grid) {
        return Err(Error::Shape("class samples use different polar grids".into()));
    }
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.data()).collect();
    fit(&Matrix::from_rows(&rows)?, k)
}

/// Per-component score limits `scale * sqrt(lambda_i)`.
pub fn score_bounds(basis: &PcaBasis, scale: f64) -> Vec<f64> {
    basis.eigenvalues.iter().map(|&l| scale * l.max(0.0).sqrt()).collect()
}

/// Scores drawn uniformly within `+-scale * sqrt(lambda_i)`.
pub fn randomize_scores_with<R: Rng + ?Sized>(basis: &PcaBasis, scale: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !scale.is_finite() || scale < 0.0 {
        return Err(Error::Parameter(format!("score scale must be a nonnegative number, got {scale}")));
    }
    Ok(score_bounds(basis, scale)
        .into_iter()
        .map(|b| if b > 0.0 { rng.gen_range(-b..=b) } else { 0.0 })
        .collect())
}

pub fn randomize_scores(basis: &PcaBasis, scale: f64, seed: u64) -> Result<Vec<f64>> {
    randomize_scores_with(basis, scale, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// One polar-image basis per digit class plus the training rows it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSubspaces {
    pub grid: PolarGrid,
    pub bases: Vec<PcaBasis>,
    pub source_ids: Vec<Vec<usize>>,
}

const BASIS_MAGIC: &[u8; 4] = b"C2GB";
const BASIS_VERSION: u32 = 1;

impl ClassSubspaces {
    pub fn basis(&self, class: usize) -> Result<&PcaBasis> {
        self.bases
            .get(class)
            .ok_or_else(|| Error::Parameter(format!("no basis for class {class}")))
    }

    /// Binary layout, little-endian throughout:
    /// `"C2GB"`, version `u32`, grid (`n_radii u32`, `n_angles u32`,
    /// `r_max f64`, `center_x f64`, `center_y f64`), class count `u32`, then
    /// per class: `k u32`, `d u32`, `mu [f64; d]`, `eigenvalues [f64; k]`,
    /// `W [f64; k*d]` row-major, source id count `u32`, ids `[u32]`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BASIS_MAGIC);
        out.extend_from_slice(&BASIS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.grid.n_radii as u32).to_le_bytes());
        out.extend_from_slice(&(self.grid.n_angles as u32).to_le_bytes());
        for v in [self.grid.r_max, self.grid.center.0, self.grid.center.1] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.bases.len() as u32).to_le_bytes());
        for (b, ids) in self.bases.iter().zip(&self.source_ids) {
            out.extend_from_slice(&(b.k() as u32).to_le_bytes());
            out.extend_from_slice(&(b.dim() as u32).to_le_bytes());
            for v in b.mean.iter().chain(&b.eigenvalues).chain(b.components.as_slice()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&(ids.len() as u32).to_le_bytes());
            for &id in ids {
                out.extend_from_slice(&(id as u32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], name: &str) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, name };
        if r.take(4)? != BASIS_MAGIC {
            return Err(Error::format(name, "not a class basis file (bad magic)"));
        }
        let version = r.u32()?;
        if version != BASIS_VERSION {
            return Err(Error::format(name, format!("unsupported basis version {version}")));
        }
        let grid = PolarGrid {
            n_radii: r.u32()? as usize,
            n_angles: r.u32()? as usize,
            r_max: r.f64()?,
            center: (r.f64()?, r.f64()?),
        };
        grid.validate().map_err(|e| Error::format(name, e.to_string()))?;
        let classes = r.u32()? as usize;
        if classes != NUM_CLASSES {
            return Err(Error::format(name, format!("expected {NUM_CLASSES} classes, found {classes}")));
        }
        let mut bases = Vec::with_capacity(classes);
        let mut source_ids = Vec::with_capacity(classes);
        for _ in 0..classes {
            let k = r.u32()? as usize;
            let d = r.u32()? as usize;
            if k == 0 || d != grid.len() {
                return Err(Error::format(name, format!("bad basis shape k={k}, d={d}")));
            }
            let mean = r.f64s(d)?;
            let eigenvalues = r.f64s(k)?;
            let components = Matrix::new(k, d, r.f64s(k * d)?)?;
            let n_ids = r.u32()? as usize;
            let ids = (0..n_ids).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            bases.push(PcaBasis {
                mean,
                components,
                eigenvalues,
                n_samples: n_ids,
            });
            source_ids.push(ids);
        }
        if r.pos != bytes.len() {
            return Err(Error::format(name, "trailing bytes after last class"));
        }
        Ok(ClassSubspaces {
            grid,
            bases,
            source_ids,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::weights::write(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        ClassSubspaces::from_bytes(&crate::weights::read(path)?, &path.display().to_string())
    }
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
    pub name: &'a str,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(self.name, "file is truncated")),
        }
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn worked_x() -> Matrix {
        Matrix::from_rows(&[[2.0, 4.0, 1.0, 3.0], [3.0, 5.0, 2.0, 4.0], [4.0, 6.0, 3.0, 5.0]]).unwrap()
    }

    fn typology_train() -> Matrix {
        Matrix::from_rows(&[[1.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]])
            .unwrap()
    }

    #[test]
    fn worked_example_basis() {
        let b = fit(&worked_x(), 1).unwrap();
        assert_eq!(b.mean, vec![3.0, 5.0, 2.0, 4.0]);
        for &w in b.components.row(0) {
            assert!((w - 0.5).abs() < 1e-12);
        }
        assert!((b.eigenvalues[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn worked_example_scores_and_exact_reconstruction() {
        let x = worked_x();
        let b = fit(&x, 1).unwrap();
        let scores: Vec<f64> = (0..3).map(|i| project(&b, x.row(i)).unwrap()[0]).collect();
        for (s, want) in scores.iter().zip([-2.0, 0.0, 2.0]) {
            assert!((s - want).abs() < 1e-12);
        }
        for i in 0..3 {
            let r = reconstruct(&b, &project(&b, x.row(i)).unwrap()).unwrap();
            for (a, e) in r.iter().zip(x.row(i)) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn typology_mean_and_first_component() {
        let b = fit(&typology_train(), 1).unwrap();
        assert_eq!(b.mean, vec![1.0, 0.25, 0.0, 0.0]);
        let w = b.components.row(0);
        assert!((w[1].abs() - 1.0).abs() < 1e-12);
        assert!(w[0].abs() < 1e-12 && w[2].abs() < 1e-12 && w[3].abs() < 1e-12);
    }

    #[test]
    fn routes_agree() {
        let x = Matrix::new(3, 6, (0..18).map(|i| ((i * 7 % 11) as f64).sqrt()).collect()).unwrap();
        let (c, _) = mean_center(&x);
        let (lg, vg) = gram_route(&c).unwrap();
        let (lc, vc) = covariance_route(&c).unwrap();
        assert_eq!(lg.len(), 2);
        for i in 0..2 {
            assert!((lg[i] - lc[i]).abs() < 1e-10);
            let dot: f64 = vg.row(i).iter().zip(vc.row(i)).map(|(a, b)| a * b).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_basics() {
        let b = fit(&worked_x(), 1).unwrap();
        assert_eq!(project(&b, &b.mean).unwrap(), vec![0.0]);
        assert_eq!(reconstruct(&b, &[0.0]).unwrap(), b.mean);
        let x: Vec<f64> = b.mean.iter().zip(b.components.row(0)).map(|(m, w)| m + 3.0 * w).collect();
        assert!((project(&b, &x).unwrap()[0] - 3.0).abs() < 1e-12);
        assert!(matches!(project(&b, &[1.0]), Err(Error::Shape(_))));
        assert!(matches!(reconstruct(&b, &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn loss_of_orthogonal_offset() {
        let b = fit(&worked_x(), 1).unwrap();
        let u = [0.5, -0.5, 0.5, -0.5];
        let c = 0.8;
        let x: Vec<f64> = b.mean.iter().zip(u).map(|(m, u)| m + c * u).collect();
        assert!((projection_loss(&b, &x).unwrap() - c * c / 4.0).abs() < 1e-12);
        assert!(projection_loss(&b, &b.mean).unwrap().abs() < 1e-15);
    }

    #[test]
    fn fit_preconditions() {
        assert!(matches!(fit(&Matrix::zeros(1, 3), 1), Err(Error::DegenerateSample(_))));
        assert!(matches!(fit(&worked_x(), 0), Err(Error::Parameter(_))));
        assert!(matches!(fit(&worked_x(), 5), Err(Error::Parameter(_))));
    }

    #[test]
    fn k_beyond_rank_pads_zero_rows() {
        let b = fit(&worked_x(), 3).unwrap();
        assert_eq!(b.k(), 3);
        assert_eq!(b.rank(), 1);
        assert_eq!(b.eigenvalues[1..], [0.0, 0.0]);
        assert!(b.components.row(1).iter().chain(b.components.row(2)).all(|&v| v == 0.0));
    }

    fn grid() -> PolarGrid {
        PolarGrid::new(4, 8).unwrap()
    }

    fn polar(f: impl Fn(usize) -> f64) -> PolarImage {
        PolarImage::new(grid(), (0..32).map(f).collect()).unwrap()
    }

    #[test]
    fn radial_identical_rows() {
        let p = polar(|i| (i % 8) as f64 * 0.1);
        let b = radial_segment_pca(&p, 2).unwrap();
        assert!(b.eigenvalues.iter().all(|&l| l == 0.0));
        for r in 0..4 {
            assert!(projection_loss(&b, p.row(r)).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn radial_rank_one_rows() {
        let base: Vec<f64> = (0..8).map(|t| 0.3 + 0.05 * t as f64).collect();
        let v: Vec<f64> = (0..8).map(|t| if t % 2 == 0 { 0.1 } else { -0.1 }).collect();
        let p = polar(|i| {
            let (r, t) = (i / 8, i % 8);
            base[t] + if r % 2 == 0 { v[t] } else { -v[t] }
        });
        let b = radial_segment_pca(&p, 1).unwrap();
        for r in 0..4 {
            assert!(projection_loss(&b, p.row(r)).unwrap() < 1e-20);
        }
    }

    #[test]
    fn class_basis_of_two_and_four_samples() {
        let a = polar(|i| (i as f64 * 0.13).sin().abs());
        let same = class_mean_basis(&[a.clone(), a.clone()], 2).unwrap();
        assert_eq!(same.mean, a.data().to_vec());
        assert!(same.eigenvalues.iter().all(|&l| l == 0.0));

        let b = polar(|i| (i as f64 * 0.29).cos().abs());
        let two = class_mean_basis(&[a.clone(), b.clone()], 2).unwrap();
        assert_eq!(two.k(), 2);
        assert_eq!(two.rank(), 1);

        let c = polar(|i| (i as f64 * 0.07).cos().powi(2));
        let d = polar(|i| ((i % 5) as f64) / 5.0);
        let four = class_mean_basis(&[a.clone(), b.clone(), c.clone(), d.clone()], 2).unwrap();
        for i in 0..32 {
            let m = (a.data()[i] + b.data()[i] + c.data()[i] + d.data()[i]) / 4.0;
            assert!((four.mean[i] - m).abs() < 1e-12);
        }
        assert!(matches!(class_mean_basis(&[a], 1), Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn randomized_scores() {
        let b = fit(&Matrix::new(5, 3, (0..15).map(|i| ((i * i) % 7) as f64).collect()).unwrap(), 3).unwrap();
        assert_eq!(randomize_scores(&b, 0.0, 9).unwrap(), vec![0.0; 3]);
        assert_eq!(randomize_scores(&b, 1.0, 9).unwrap(), randomize_scores(&b, 1.0, 9).unwrap());
        assert!(matches!(randomize_scores(&b, -1.0, 9), Err(Error::Parameter(_))));

        let bounds = score_bounds(&b, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let mut sums = [0.0; 3];
        for _ in 0..n {
            let z = randomize_scores_with(&b, 1.0, &mut rng).unwrap();
            for i in 0..3 {
                assert!(z[i].abs() <= bounds[i]);
                sums[i] += z[i];
            }
        }
        for i in 0..3 {
            // Uniform on [-b, b] has sigma b / sqrt(3); the mean of n draws
            // has sigma b / sqrt(3 n).
            let sigma = bounds[i] / (3.0 * n as f64).sqrt();
            assert!((sums[i] / n as f64).abs() <= 3.0 * sigma + 1e-15);
        }
    }

    #[test]
    fn subspaces_round_trip_and_reject_garbage() {
        let g = grid();
        let bases: Vec<PcaBasis> = (0..NUM_CLASSES)
            .map(|c| {
                let a = polar(|i| ((i + c) as f64 * 0.11).sin().abs());
                let b = polar(|i| ((i * c) as f64 * 0.05).cos().abs());
                class_mean_basis(&[a, b], 2).unwrap()
            })
            .collect();
        let s = ClassSubspaces {
            grid: g,
            bases,
            source_ids: (0..NUM_CLASSES).map(|c| vec![c * 2, c * 2 + 1]).collect(),
        };
        let bytes = s.to_bytes();
        assert_eq!(ClassSubspaces::from_bytes(&bytes, "b").unwrap(), s);
        assert!(ClassSubspaces::from_bytes(&bytes[..bytes.len() - 3], "b").is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ClassSubspaces::from_bytes(&bad, "b"), Err(Error::Format { .. })));
    }

    proptest! {
        #[test]
        fn reconstruct_project_is_idempotent(vals in prop::collection::vec(-1.0f64..1.0, 30), x in prop::collection::vec(-2.0f64..2.0, 6), k in 1usize..6) {
            let b = fit(&Matrix::new(5, 6, vals).unwrap(), k).unwrap();
            let once = reconstruct(&b, &project(&b, &x).unwrap()).unwrap();
            let twice = reconstruct(&b, &project(&b, &once).unwrap()).unwrap();
            for (a, c) in once.iter().zip(&twice) {
                prop_assert!((a - c).abs() < 1e-10);
            }
            prop_assert!(projection_loss(&b, &once).unwrap() < 1e-9);
        }

        #[test]
        fn full_rank_fit_reproduces_training_rows(vals in prop::collection::vec(-1.0f64..1.0, 24)) {
            let x = Matrix::new(4, 6, vals).unwrap();
            let b = fit(&x, 3).unwrap();
            for i in 0..4 {
                prop_assert!(projection_loss(&b, x.row(i)).unwrap() < 1e-9);
            }
        }

        #[test]
        fn score_variance_is_non_increasing(vals in prop::collection::vec(-1.0f64..1.0, 40)) {
            let x = Matrix::new(8, 5, vals).unwrap();
            let b = fit(&x, 5).unwrap();
            let var: Vec<f64> = (0..5)
                .map(|c| (0..8).map(|i| project(&b, x.row(i)).unwrap()[c].powi(2)).sum::<f64>() / 7.0)
                .collect();
            for w in var.windows(2) {
                prop_assert!(w[0] + 1e-9 >= w[1]);
            }
        }
    }
}
