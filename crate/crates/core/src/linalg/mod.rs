//! Dense matrices, sample statistics and symmetric eigendecomposition.

mod eigen;
pub(crate) mod matrix;

pub use eigen::{symmetric_eigen, EigenResult};
pub(crate) use eigen::fix_sign;
pub use matrix::Matrix;

use crate::error::{Error, Result};

/// Subtracts each column's mean. Returns the centered matrix and the means.
pub fn mean_center(x: &Matrix) -> (Matrix, Vec<f64>) {
    let n = x.rows() as f64;
    let mut mu = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        for (m, v) in mu.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n);
    let mut centered = x.clone();
    for i in 0..x.rows() {
        for (c, m) in centered.row_mut(i).iter_mut().zip(&mu) {
            *c -= m;
        }
    }
    (centered, mu)
}

/// Sample covariance `X^T X / (n - 1)` of an already centered matrix.
pub fn covariance(centered: &Matrix) -> Result<Matrix> {
    let n = centered.rows();
    if n < 2 {
        return Err(Error::DegenerateSample(format!("covariance needs at least 2 rows, got {n}")));
    }
    let d = centered.cols();
    let mut c = Matrix::zeros(d, d);
    matrix::gemm(1.0 / (n as f64 - 1.0), centered, true, centered, false, 0.0, &mut c);
    // gemm accumulates in blocks, so restore exact symmetry.
    for i in 0..d {
        for j in (i + 1)..d {
            let m = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = m;
            c[(j, i)] = m;
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn worked_x() -> Matrix {
        Matrix::from_rows(&[[2.0, 4.0, 1.0, 3.0], [3.0, 5.0, 2.0, 4.0], [4.0, 6.0, 3.0, 5.0]]).unwrap()
    }

    #[test]
    fn centering_worked_matrix() {
        let (c, mu) = mean_center(&worked_x());
        assert_eq!(mu, vec![3.0, 5.0, 2.0, 4.0]);
        let expect = Matrix::from_rows(&[[-1.0; 4], [0.0; 4], [1.0; 4]]).unwrap();
        assert_eq!(c, expect);
    }

    #[test]
    fn centering_single_row() {
        let x = Matrix::from_rows(&[[1.5, -2.0, 7.0]]).unwrap();
        let (c, mu) = mean_center(&x);
        assert_eq!(mu, vec![1.5, -2.0, 7.0]);
        assert!(c.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn covariance_worked_matrix_is_all_ones() {
        let (c, _) = mean_center(&worked_x());
        let cov = covariance(&c).unwrap();
        assert_eq!(cov, Matrix::filled(4, 4, 1.0));
    }

    #[test]
    fn covariance_of_zero_and_two_point_inputs() {
        assert_eq!(covariance(&Matrix::zeros(3, 2)).unwrap(), Matrix::zeros(2, 2));
        let a = 1.7;
        let cov = covariance(&Matrix::column_vector(&[-a, a]).unwrap()).unwrap();
        assert!((cov.item() - 2.0 * a * a).abs() < 1e-12);
    }

    #[test]
    fn covariance_needs_two_rows() {
        assert!(matches!(covariance(&Matrix::zeros(1, 3)), Err(Error::DegenerateSample(_))));
    }

    proptest! {
        #[test]
        fn centered_columns_sum_to_zero(vals in prop::collection::vec(-100.0f64..100.0, 12)) {
            let x = Matrix::new(4, 3, vals).unwrap();
            let (c, _) = mean_center(&x);
            for j in 0..3 {
                prop_assert!(c.column(j).iter().sum::<f64>().abs() < 1e-12 * 100.0 * 4.0);
            }
        }

        #[test]
        fn covariance_is_row_permutation_invariant(vals in prop::collection::vec(-10.0f64..10.0, 15), rot in 0usize..5) {
            let x = Matrix::new(5, 3, vals).unwrap();
            let rows: Vec<Vec<f64>> = (0..5).map(|i| x.row((i + rot) % 5).to_vec()).collect();
            let y = Matrix::from_rows(&rows).unwrap();
            let cx = covariance(&mean_center(&x).0).unwrap();
            let cy = covariance(&mean_center(&y).0).unwrap();
            prop_assert!(cx.max_abs_diff(&cy) < 1e-10);
        }
    }
}
