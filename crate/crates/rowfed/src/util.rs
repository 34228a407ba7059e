//! Small shared numeric helpers.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Result, RowFedError};

#[cfg_attr(not(test), allow(dead_code))] // test-side helper
pub(crate) fn frob(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn frob_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn all_finite(a: &Array2<f64>) -> bool {
    a.iter().all(|v| v.is_finite())
}

pub(crate) fn row_norm(v: ArrayView1<f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn to_na(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_row_iterator(a.nrows(), a.ncols(), a.iter().cloned())
}

pub(crate) fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Solves `a x = b` for a symmetric positive definite `a` via Cholesky.
pub(crate) fn solve_spd(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    let na_a = to_na(a);
    let na_b = to_na(b);
    let chol = nalgebra::Cholesky::new(na_a).ok_or_else(|| {
        RowFedError::RankDeficient("Cholesky factorization failed; matrix is not positive definite".into())
    })?;
    Ok(from_na(&chol.solve(&na_b)))
}

/// Largest eigenvalue of a symmetric matrix.
pub(crate) fn sym_max_eig(a: ArrayView2<f64>) -> f64 {
    let na_a = to_na(a);
    let sym = na_a.symmetric_eigenvalues();
    sym.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solve_spd_recovers_solution() {
        let a = array![[4.0, 1.0], [1.0, 3.0]];
        let x = array![[1.0, 2.0], [-1.0, 0.5]];
        let b = a.dot(&x);
        let got = solve_spd(a.view(), b.view()).unwrap();
        assert!(frob_diff(&got, &x) < 1e-12);
    }

    #[test]
    fn sym_max_eig_diagonal() {
        let a = array![[2.0, 0.0], [0.0, 5.0]];
        assert!((sym_max_eig(a.view()) - 5.0).abs() < 1e-12);
    }
}
