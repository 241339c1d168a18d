//! Small dense linear algebra over generic scalars.
//!
//! nalgebra covers the `f64` work (SVD, eigenvalues). The routines here exist
//! because the same formulas must also run on [`Dual`](crate::expr::Dual) and
//! [`Taylor`](crate::expr::Taylor) values to be differentiated exactly.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::expr::Scalar;

pub type Mat<T> = Vec<Vec<T>>;

/// Solves `a x = b` by Gaussian elimination with partial pivoting on the
/// value part.
pub fn solve<T: Scalar>(mut a: Mat<T>, mut b: Vec<T>) -> Result<Vec<T>> {
    let n = b.len();
    let scale = a
        .iter()
        .flat_map(|r| r.iter().map(|v| v.value().abs()))
        .fold(0.0, f64::max);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                a[i][col]
                    .value()
                    .abs()
                    .total_cmp(&a[j][col].value().abs())
            })
            .expect("nonempty");
        if a[pivot][col].value().abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::domain("singular linear system"));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let inv = T::cst(1.0) / a[col][col].clone();
        for row in col + 1..n {
            if a[row][col].value() == 0.0 && !a[row][col].has_derivatives() {
                continue;
            }
            let factor = a[row][col].clone() * inv.clone();
            for c in col..n {
                let t = factor.clone() * a[col][c].clone();
                a[row][c] = a[row][c].clone() - t;
            }
            let t = factor * b[col].clone();
            b[row] = b[row].clone() - t;
        }
    }
    let mut x = vec![T::cst(0.0); n];
    for row in (0..n).rev() {
        let mut acc = b[row].clone();
        for c in row + 1..n {
            acc = acc - a[row][c].clone() * x[c].clone();
        }
        x[row] = acc / a[row][row].clone();
    }
    Ok(x)
}

pub fn inverse<T: Scalar>(a: &Mat<T>) -> Result<Mat<T>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let e: Vec<T> = (0..n).map(|i| T::cst(if i == j { 1.0 } else { 0.0 })).collect();
        cols.push(solve(a.clone(), e)?);
    }
    Ok((0..n)
        .map(|i| (0..n).map(|j| cols[j][i].clone()).collect())
        .collect())
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::cst(0.0);
    for (x, y) in a.iter().zip(b) {
        acc = acc + x.clone() * y.clone();
    }
    acc
}

pub fn mat_vec<T: Scalar>(a: &Mat<T>, v: &[T]) -> Vec<T> {
    a.iter().map(|row| dot(row, v)).collect()
}

pub fn to_dmatrix(a: &Mat<f64>) -> DMatrix<f64> {
    let rows = a.len();
    let cols = a.first().map_or(0, |r| r.len());
    DMatrix::from_fn(rows, cols, |i, j| a[i][j])
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Mat<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Numerical rank with a relative singular-value cutoff.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s >= rel_tol * max).count()
}

/// Orthonormal basis of the null space of `m`, as columns.
pub fn null_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let cols = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::identity(cols, cols);
    }
    // pad to square so the SVD returns a full right basis
    let mut sq = DMatrix::zeros(cols.max(m.nrows()), cols);
    sq.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
    let svd = sq.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] < rel_tol * max.max(f64::MIN_POSITIVE) || max == 0.0)
        .collect();
    DMatrix::from_fn(cols, keep.len(), |i, j| vt[(keep[j], i)])
}

/// Least-squares solution of `a x ≈ b` through the SVD.
pub fn lstsq(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let svd = a.clone().svd(true, true);
    let rhs = nalgebra::DVector::from_column_slice(b);
    let x = svd
        .solve(&rhs, 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE))
        .expect("both factors computed");
    x.iter().cloned().collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Dual;

    #[test]
    fn solve_matches_hand_values() {
        let a = vec![vec![0.0, 2.0], vec![1.0, 1.0]];
        let x = solve(a, vec![4.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0]);
        assert!(solve(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn solve_differentiates() {
        // x = 1/t for a = [[t]]
        let t = Dual::var(2.0, 0, 1);
        let x = solve(vec![vec![t]], vec![Dual::constant(1.0)]).unwrap();
        assert!((x[0].d(0) + 0.25).abs() < 1e-15);
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let m = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]);
        let ns = null_space(&m, 1e-10);
        assert_eq!(ns.ncols(), 2);
        assert!((&m * &ns).norm() < 1e-14);
        assert_eq!(rank(&m, 1e-10), 1);
    }
}
