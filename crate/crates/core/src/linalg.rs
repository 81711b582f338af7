//! Small dense and banded helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

/// Solves a tridiagonal system with partial pivoting.
///
/// `sub[i]` couples row `i + 1` to column `i`, `sup[i]` couples row `i` to
/// column `i + 1`. Returns `None` when a pivot vanishes.
pub fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    assert_eq!(rhs.len(), n);
    if n == 0 {
        return Some(Vec::new());
    }
    assert!(sub.len() + 1 >= n && sup.len() + 1 >= n);
    // Row i of U holds (d[i], u1[i], u2[i]) at columns i, i+1, i+2.
    let mut d = diag.to_vec();
    let mut u1: Vec<f64> = (0..n).map(|i| if i + 1 < n { sup[i] } else { 0.0 }).collect();
    let mut u2 = vec![0.0; n];
    let mut l: Vec<f64> = (0..n).map(|i| if i + 1 < n { sub[i] } else { 0.0 }).collect();
    let mut b = rhs.to_vec();
    let mut swapped = vec![false; n];

    for i in 0..n.saturating_sub(1) {
        if l[i].abs() > d[i].abs() {
            // swap rows i and i+1
            swapped[i] = true;
            let (di, u1i, u2i) = (d[i], u1[i], u2[i]);
            d[i] = l[i];
            u1[i] = d[i + 1];
            u2[i] = u1[i + 1];
            l[i] = di;
            d[i + 1] = u1i;
            u1[i + 1] = u2i;
            b.swap(i, i + 1);
        }
        if d[i] == 0.0 {
            return None;
        }
        let m = l[i] / d[i];
        l[i] = m;
        d[i + 1] -= m * u1[i];
        u1[i + 1] -= m * u2[i];
        b[i + 1] -= m * b[i];
    }
    if d[n - 1] == 0.0 {
        return None;
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        if i + 1 < n {
            s -= u1[i] * x[i + 1];
        }
        if i + 2 < n {
            s -= u2[i] * x[i + 2];
        }
        x[i] = s / d[i];
    }
    Some(x)
}

/// Orthonormal basis of the column space, dropping columns whose singular
/// value falls below `rel_tol * sigma_max`.
pub fn orthonormal_columns(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> =
        svd.singular_values.iter().enumerate().filter(|(_, s)| smax > 0.0 && **s > rel_tol * smax).map(|(i, _)| i).collect();
    DMatrix::from_fn(m.nrows(), keep.len(), |r, c| u[(r, keep[c])])
}

/// Cosines of the principal angles between the spans of two matrices with
/// orthonormal columns, in descending order.
pub fn principal_cosines(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    if a.ncols() == 0 || b.ncols() == 0 {
        return Vec::new();
    }
    let c = a.transpose() * b;
    let mut s: Vec<f64> = c.singular_values().iter().map(|v| v.min(1.0)).collect();
    s.sort_by(|x, y| y.partial_cmp(x).unwrap());
    s
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| f64::max(m, x.abs()))
}

pub fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_matches_dense_solve() {
        let sub = [1.0, -2.0, 0.5, 3.0];
        let diag = [0.1, 4.0, -1.0, 2.0, 1.0];
        let sup = [2.0, 1.0, -3.0, 0.25];
        let rhs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let x = solve_tridiagonal(&sub, &diag, &sup, &rhs).unwrap();
        let mut a = DMatrix::zeros(5, 5);
        for i in 0..5 {
            a[(i, i)] = diag[i];
            if i + 1 < 5 {
                a[(i + 1, i)] = sub[i];
                a[(i, i + 1)] = sup[i];
            }
        }
        let r = &a * DVector::from_column_slice(&x) - DVector::from_column_slice(&rhs);
        assert!(r.norm() < 1e-12, "residual {}", r.norm());
    }

    #[test]
    fn singular_tridiagonal_is_rejected() {
        assert!(solve_tridiagonal(&[0.0], &[0.0, 1.0], &[0.0], &[1.0, 1.0]).is_none());
    }

    #[test]
    fn principal_cosines_of_identical_spans_are_one() {
        let a = orthonormal_columns(&DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 0.0]), 1e-12);
        let b = orthonormal_columns(&DMatrix::from_row_slice(3, 1, &[-2.0, -4.0, 0.0]), 1e-12);
        let c = principal_cosines(&a, &b);
        assert!((c[0] - 1.0).abs() < 1e-12);
    }
}
