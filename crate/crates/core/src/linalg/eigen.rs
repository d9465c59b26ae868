//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

const MAX_SWEEPS: usize = 100;
const OFF_DIAGONAL_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-9;

/// Eigenpairs of a symmetric matrix.
///
/// Eigenvalues are sorted descending and row `i` of `eigenvectors` is the unit
/// eigenvector for `eigenvalues[i]`. Each eigenvector's first component with
/// magnitude above `1e-12` is nonnegative.
#[derive(Debug, Clone)]
pub struct EigenResult {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl EigenResult {
    /// `V^T diag(lambda) V`, the matrix this decomposition represents.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.eigenvalues.len();
        let mut scaled = self.eigenvectors.clone();
        for (i, &l) in self.eigenvalues.iter().enumerate() {
            for v in scaled.row_mut(i) {
                *v *= l;
            }
        }
        let mut out = Matrix::zeros(n, n);
        crate::linalg::matrix::gemm(1.0, &self.eigenvectors, true, &scaled, false, 0.0, &mut out);
        out
    }
}

pub fn symmetric_eigen(c: &Matrix) -> Result<EigenResult> {
    let n = c.rows();
    if c.cols() != n {
        return Err(Error::Shape(format!("eigendecomposition needs a square matrix, got {}x{}", n, c.cols())));
    }
    let scale = c.max_abs().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (c[(i, j)] - c[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::Contract(format!(
                    "matrix is not symmetric at ({i},{j}): {} vs {}",
                    c[(i, j)],
                    c[(j, i)]
                )));
            }
        }
    }

    // Work on the symmetrized copy so tiny asymmetries do not accumulate.
    let mut a = c.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
    // Columns of `v` are eigenvectors while iterating.
    let mut v = Matrix::identity(n);
    let threshold = OFF_DIAGONAL_TOL * c.frobenius_norm().max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) < threshold {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                rotate(&mut a, &mut v, p, q, cs, sn);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).unwrap_or(std::cmp::Ordering::Equal));

    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (row, &col) in order.iter().enumerate() {
        let out = eigenvectors.row_mut(row);
        for (k, o) in out.iter_mut().enumerate() {
            *o = v[(k, col)];
        }
        fix_sign(out);
    }
    Ok(EigenResult {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Applies the rotation in the (p, q) plane that zeroes `a[p][q]`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.rows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

pub(crate) fn fix_sign(vec: &mut [f64]) {
    if let Some(&first) = vec.iter().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            vec.iter_mut().for_each(|x| *x = -*x);
        }
    }
}
