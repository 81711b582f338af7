//! Real Schur form with explicit block structure and block reordering.

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;

use super::{SpectralError, SquareMatrix, SCHUR_MAX_ITER_PER_DIM};

/// `A = Q T Qᵀ` with `T` quasi-upper-triangular. `blocks` lists the diagonal
/// block sizes (1 for real eigenvalues, 2 for complex conjugate pairs).
#[derive(Debug, Clone)]
pub struct RealSchur {
    pub q: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub blocks: Vec<usize>,
}

impl RealSchur {
    pub fn block_eigenvalues(&self, start: usize, size: usize) -> Vec<Complex64> {
        let t = &self.t;
        if size == 1 {
            return vec![Complex64::new(t[(start, start)], 0.0)];
        }
        let (a, b, c, d) = (t[(start, start)], t[(start, start + 1)], t[(start + 1, start)], t[(start + 1, start + 1)]);
        let mean = 0.5 * (a + d);
        let p = 0.5 * (a - d);
        let disc = p * p + b * c;
        if disc >= 0.0 {
            let s = disc.sqrt();
            vec![Complex64::new(mean - s, 0.0), Complex64::new(mean + s, 0.0)]
        } else {
            let s = (-disc).sqrt();
            vec![Complex64::new(mean, -s), Complex64::new(mean, s)]
        }
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.t.nrows());
        let mut start = 0;
        for &size in &self.blocks {
            out.extend(self.block_eigenvalues(start, size));
            start += size;
        }
        out
    }

    fn block_starts(&self) -> Vec<usize> {
        let mut starts = Vec::with_capacity(self.blocks.len());
        let mut s = 0;
        for b in &self.blocks {
            starts.push(s);
            s += b;
        }
        starts
    }
}

/// Schur form with a selected eigenvalue group moved to the leading block.
#[derive(Debug, Clone)]
pub struct OrderedSchur {
    pub schur: RealSchur,
    /// Dimension of the leading invariant subspace (columns `0..k` of `q`).
    pub k: usize,
}

impl OrderedSchur {
    /// Orthonormal basis of the invariant subspace of the selected group.
    pub fn leading_basis(&self) -> DMatrix<f64> {
        self.schur.q.columns(0, self.k).into_owned()
    }
}

/// Computes the real Schur form and normalizes its block structure: 2×2
/// blocks with real eigenvalues are split.
pub fn real_schur(a: &SquareMatrix) -> Result<RealSchur, SpectralError> {
    let n = a.dim();
    let max_iter = SCHUR_MAX_ITER_PER_DIM * n.max(2);
    let schur = Schur::try_new(a.as_matrix().clone(), f64::EPSILON, max_iter).ok_or(SpectralError::NonConvergence(max_iter))?;
    let (q, t) = schur.unpack();
    let mut rs = RealSchur { q, t, blocks: Vec::new() };
    normalize_blocks(&mut rs);
    Ok(rs)
}

fn normalize_blocks(rs: &mut RealSchur) {
    let n = rs.t.nrows();
    let norm = rs.t.amax().max(f64::MIN_POSITIVE);
    // clean everything below the first subdiagonal
    for j in 0..n {
        for i in (j + 2)..n {
            rs.t[(i, j)] = 0.0;
        }
    }
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n {
            let sub = rs.t[(i + 1, i)].abs();
            let local = rs.t[(i, i)].abs() + rs.t[(i + 1, i + 1)].abs();
            let negligible = sub <= f64::EPSILON * local.max(f64::EPSILON * norm);
            if negligible {
                rs.t[(i + 1, i)] = 0.0;
            } else if split_real_pair(rs, i) {
                blocks.push(1);
                i += 1;
                continue;
            } else {
                blocks.push(2);
                i += 2;
                continue;
            }
        }
        blocks.push(1);
        i += 1;
    }
    rs.blocks = blocks;
}

/// If the 2×2 block at `i` has real eigenvalues, triangularizes it with a
/// rotation and returns true.
fn split_real_pair(rs: &mut RealSchur, i: usize) -> bool {
    let t = &rs.t;
    let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
    let p = 0.5 * (a - d);
    let disc = p * p + b * c;
    if disc < 0.0 {
        return false;
    }
    let sign = if p >= 0.0 { 1.0 } else { -1.0 };
    let lambda = 0.5 * (a + d) + sign * disc.sqrt();
    // eigenvector of [[a,b],[c,d]] for lambda: two candidate forms
    let v1 = (b, lambda - a);
    let v2 = (lambda - d, c);
    let (x, y) = if v1.0.hypot(v1.1) >= v2.0.hypot(v2.1) { v1 } else { v2 };
    let r = x.hypot(y);
    if r == 0.0 {
        return false;
    }
    let (cs, sn) = (x / r, y / r);
    apply_rotation(rs, i, cs, sn);
    rs.t[(i + 1, i)] = 0.0;
    true
}

/// T ← Gᵀ T G, Q ← Q G with G acting on coordinates (i, i+1) and first
/// column (cs, sn).
fn apply_rotation(rs: &mut RealSchur, i: usize, cs: f64, sn: f64) {
    let n = rs.t.nrows();
    for j in 0..n {
        let (x, y) = (rs.t[(i, j)], rs.t[(i + 1, j)]);
        rs.t[(i, j)] = cs * x + sn * y;
        rs.t[(i + 1, j)] = -sn * x + cs * y;
    }
    for j in 0..n {
        let (x, y) = (rs.t[(j, i)], rs.t[(j, i + 1)]);
        rs.t[(j, i)] = cs * x + sn * y;
        rs.t[(j, i + 1)] = -sn * x + cs * y;
        let (x, y) = (rs.q[(j, i)], rs.q[(j, i + 1)]);
        rs.q[(j, i)] = cs * x + sn * y;
        rs.q[(j, i + 1)] = -sn * x + cs * y;
    }
}

/// Swaps the adjacent diagonal blocks of sizes `p` and `q` starting at row
/// `j`, by solving the small Sylvester equation `A11 X - X A22 = A12` and
/// rotating onto the invariant subspace `[-X; I]`.
fn swap_adjacent(rs: &mut RealSchur, j: usize, p: usize, q: usize) -> Result<(), SpectralError> {
    let k = p + q;
    let n = rs.t.nrows();
    let a11 = rs.t.view((j, j), (p, p)).into_owned();
    let a12 = rs.t.view((j, j + p), (p, q)).into_owned();
    let a22 = rs.t.view((j + p, j + p), (q, q)).into_owned();

    // (I_q ⊗ A11 - A22ᵀ ⊗ I_p) vec(X) = vec(A12), column-major vec
    let mut kron = DMatrix::zeros(p * q, p * q);
    for cq in 0..q {
        for r in 0..p {
            let row = cq * p + r;
            for c in 0..p {
                kron[(row, cq * p + c)] += a11[(r, c)];
            }
            for cq2 in 0..q {
                kron[(row, cq2 * p + r)] -= a22[(cq2, cq)];
            }
        }
    }
    let rhs = nalgebra::DVector::from_fn(p * q, |idx, _| a12[(idx % p, idx / p)]);
    let x = kron.lu().solve(&rhs).ok_or_else(|| SpectralError::IllConditioned("blocks to swap share an eigenvalue".into()))?;

    let mut basis = DMatrix::zeros(k, k);
    for c in 0..q {
        for r in 0..p {
            basis[(r, c)] = -x[c * p + r];
        }
        basis[(p + c, c)] = 1.0;
    }
    // remaining columns only complete the square shape for the full Q factor
    for c in 0..p {
        basis[(c, q + c)] = 1.0;
    }
    let qr = basis.qr();
    let qs = qr.q();

    let rows = rs.t.rows(j, k).into_owned();
    let new_rows = qs.transpose() * rows;
    rs.t.rows_mut(j, k).copy_from(&new_rows);
    let cols = rs.t.columns(j, k).into_owned();
    rs.t.columns_mut(j, k).copy_from(&(cols * &qs));
    let qcols = rs.q.columns(j, k).into_owned();
    rs.q.columns_mut(j, k).copy_from(&(qcols * &qs));

    let norm = rs.t.amax().max(f64::MIN_POSITIVE);
    let mut residual: f64 = 0.0;
    for r in (j + q)..(j + k) {
        for c in j..(j + q) {
            residual = residual.max(rs.t[(r, c)].abs());
            rs.t[(r, c)] = 0.0;
        }
    }
    if residual > 1e3 * f64::EPSILON * norm * (n as f64) {
        return Err(SpectralError::IllConditioned(format!("block swap left residual {residual:.3e}")));
    }
    Ok(())
}

/// Reorders the Schur form so that all eigenvalues for which `select`
/// returns true occupy the leading diagonal blocks.
pub fn ordered_schur(a: &SquareMatrix, select: impl Fn(Complex64) -> bool) -> Result<OrderedSchur, SpectralError> {
    let mut rs = real_schur(a)?;
    let flags = reorder(&mut rs, select)?;
    let k = rs.blocks.iter().zip(&flags).take_while(|(_, s)| **s).map(|(b, _)| *b).sum();
    Ok(OrderedSchur { schur: rs, k })
}

/// Returns the per-block selection flags in the new order.
fn reorder(rs: &mut RealSchur, select: impl Fn(Complex64) -> bool) -> Result<Vec<bool>, SpectralError> {
    let starts = rs.block_starts();
    let mut flags: Vec<bool> = rs.blocks.iter().zip(&starts).map(|(&size, &start)| select(rs.block_eigenvalues(start, size)[0])).collect();
    let mut target = 0;
    for idx in 0..rs.blocks.len() {
        if !flags[idx] {
            continue;
        }
        let mut cur = idx;
        while cur > target {
            let start: usize = rs.blocks[..cur - 1].iter().sum();
            let (p, q) = (rs.blocks[cur - 1], rs.blocks[cur]);
            swap_adjacent(rs, start, p, q)?;
            rs.blocks.swap(cur - 1, cur);
            flags.swap(cur - 1, cur);
            cur -= 1;
        }
        target += 1;
    }
    Ok(flags)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SquareMatrix {
        SquareMatrix::from_rows(&[
            &[4.0, 1.0, -2.0, 0.5, 0.0],
            &[1.0, -3.0, 0.0, 2.0, 1.0],
            &[0.5, 2.0, 0.0, -1.0, 3.0],
            &[0.0, -1.0, 4.0, 1.0, 0.0],
            &[2.0, 0.0, 1.0, 0.0, -1.0],
        ])
        .unwrap()
    }

    fn check_factorization(a: &SquareMatrix, rs: &RealSchur) {
        let recon = &rs.q * &rs.t * rs.q.transpose();
        assert!((recon - a.as_matrix()).amax() < 1e-11);
        let eye = DMatrix::<f64>::identity(a.dim(), a.dim());
        assert!((rs.q.transpose() * &rs.q - eye).amax() < 1e-12);
        assert_eq!(rs.blocks.iter().sum::<usize>(), a.dim());
    }

    #[test]
    fn schur_reconstructs() {
        let a = sample();
        let rs = real_schur(&a).unwrap();
        check_factorization(&a, &rs);
    }

    #[test]
    fn reordering_moves_selected_group_first() {
        let a = sample();
        let before = real_schur(&a).unwrap().eigenvalues();
        for sel in [
            Box::new(|l: Complex64| l.re < 0.0) as Box<dyn Fn(Complex64) -> bool>,
            Box::new(|l: Complex64| l.re > 2.0),
            Box::new(|l: Complex64| l.im.abs() > 1e-9),
        ] {
            let os = ordered_schur(&a, &sel).unwrap();
            check_factorization(&a, &os.schur);
            let after = os.schur.eigenvalues();
            let expected = before.iter().filter(|l| sel(**l)).count();
            assert_eq!(os.k, expected);
            assert!(after[..os.k].iter().all(|l| sel(*l)));
            assert!(after[os.k..].iter().all(|l| !sel(*l)));
            // leading columns span an invariant subspace
            let v = os.leading_basis();
            let av = a.as_matrix() * &v;
            let proj = &v * (v.transpose() * &av);
            assert!((av - proj).amax() < 1e-10);
        }
    }

    #[test]
    fn real_pair_block_is_split() {
        // symmetric 2x2 has real eigenvalues; no 2x2 blocks may survive
        let a = SquareMatrix::from_rows(&[&[1.0, 2.0], &[2.0, -1.0]]).unwrap();
        let rs = real_schur(&a).unwrap();
        assert_eq!(rs.blocks, vec![1, 1]);
        check_factorization(&a, &rs);
    }
}
