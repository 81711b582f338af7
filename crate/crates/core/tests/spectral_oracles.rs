use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use normstab::spectral::{
    eigen_decompose, semisimple_zero, spectral_projections, SpectralGroup, SquareMatrix, DEFAULT_GAP, DEFAULT_TOL_ZERO,
};

/// Characteristic polynomial coefficients (monic, highest degree first) by
/// the Faddeev-LeVerrier recursion.
fn char_poly(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut coeffs = vec![1.0];
    let mut m = DMatrix::<f64>::zeros(n, n);
    let id = DMatrix::<f64>::identity(n, n);
    for k in 1..=n {
        m = a * &m + &id * coeffs[k - 1];
        let c = -(a * &m).trace() / k as f64;
        coeffs.push(c);
    }
    coeffs
}

/// Durand-Kerner iteration for all complex roots of a monic polynomial.
fn poly_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let n = coeffs.len() - 1;
    let eval = |z: Complex64| coeffs.iter().fold(Complex64::new(0.0, 0.0), |acc, c| acc * z + c);
    let seed = Complex64::new(0.4, 0.9);
    let radius = 1.0 + coeffs.iter().skip(1).fold(0.0f64, |m, c| m.max(c.abs()));
    let mut z: Vec<Complex64> = (0..n).map(|k| seed.powu(k as u32) * radius).collect();
    for _ in 0..2000 {
        let mut delta: f64 = 0.0;
        for i in 0..n {
            let mut den = Complex64::new(1.0, 0.0);
            for j in 0..n {
                if i != j {
                    den *= z[i] - z[j];
                }
            }
            let step = eval(z[i]) / den;
            z[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-15 {
            break;
        }
    }
    z
}

#[test]
fn symmetric_eigenvalues_match_characteristic_polynomial_roots() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let b = DMatrix::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0));
        let a = (&b + b.transpose()) * 0.5;
        let rep = eigen_decompose(&SquareMatrix::new(a.clone()).unwrap(), DEFAULT_TOL_ZERO, DEFAULT_GAP).unwrap();
        let mut ours: Vec<f64> = rep.eigenvalues.iter().map(|l| l.re).collect();
        assert!(rep.eigenvalues.iter().all(|l| l.im.abs() < 1e-12));
        let mut roots: Vec<f64> = poly_roots(&char_poly(&a)).iter().map(|r| r.re).collect();
        ours.sort_by(|x, y| x.partial_cmp(y).unwrap());
        roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (x, y) in ours.iter().zip(&roots) {
            assert!((x - y).abs() < 1e-8, "{ours:?} vs {roots:?}");
        }
    }
}

/// Exact rank of an integer matrix by fraction-free elimination.
fn exact_rank(a: &[Vec<i128>]) -> usize {
    let mut m: Vec<Vec<i128>> = a.to_vec();
    let (rows, cols) = (m.len(), m[0].len());
    let mut rank = 0;
    let mut prev = 1i128;
    for c in 0..cols {
        let Some(p) = (rank..rows).find(|&r| m[r][c] != 0) else { continue };
        m.swap(rank, p);
        for r in rank + 1..rows {
            for k in c + 1..cols {
                m[r][k] = (m[rank][c] * m[r][k] - m[r][c] * m[rank][k]) / prev;
            }
            m[r][c] = 0;
        }
        prev = m[rank][c];
        rank += 1;
    }
    rank
}

fn int_mul(a: &[Vec<i128>], b: &[Vec<i128>]) -> Vec<Vec<i128>> {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
}

/// `P J P⁻¹` with `P` unit lower times unit upper triangular, so `P⁻¹` is
/// integral as well.
fn conjugated_jordan(j: &[Vec<i128>], rng: &mut ChaCha8Rng) -> Vec<Vec<i128>> {
    let n = j.len();
    let mut l = vec![vec![0i128; n]; n];
    let mut u = vec![vec![0i128; n]; n];
    for i in 0..n {
        l[i][i] = 1;
        u[i][i] = 1;
        for k in 0..i {
            l[i][k] = rng.gen_range(-2..=2);
            u[k][i] = rng.gen_range(-2..=2);
        }
    }
    let inv_unit_lower = |t: &Vec<Vec<i128>>| {
        let mut inv = vec![vec![0i128; n]; n];
        #[allow(clippy::needless_range_loop)]
        for c in 0..n {
            for r in 0..n {
                let mut s: i128 = if r == c { 1 } else { 0 };
                for k in 0..r {
                    s -= t[r][k] * inv[k][c];
                }
                inv[r][c] = s;
            }
        }
        inv
    };
    let transpose = |t: &Vec<Vec<i128>>| (0..n).map(|i| (0..n).map(|k| t[k][i]).collect()).collect::<Vec<Vec<i128>>>();
    let p = int_mul(&l, &u);
    let l_inv = inv_unit_lower(&l);
    let u_inv = transpose(&inv_unit_lower(&transpose(&u)));
    let p_inv = int_mul(&u_inv, &l_inv);
    int_mul(&int_mul(&p, j), &p_inv)
}

#[test]
fn semisimplicity_matches_exact_jordan_test() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for n in 2..=6usize {
        for _ in 0..15 {
            // random block structure: zero blocks of size 1 or 2, nonzero diagonal otherwise
            let mut j = vec![vec![0i128; n]; n];
            let mut i = 0;
            while i < n {
                match rng.gen_range(0..3) {
                    0 => i += 1,
                    1 if i + 1 < n => {
                        j[i][i + 1] = 1;
                        i += 2;
                    }
                    _ => {
                        j[i][i] = rng.gen_range(1..=3) * if rng.gen_bool(0.5) { 1 } else { -1 };
                        i += 1;
                    }
                }
            }
            let a = conjugated_jordan(&j, &mut rng);
            let a2 = int_mul(&a, &a);
            let exact = n - exact_rank(&a) == n - exact_rank(&a2);
            let m = DMatrix::from_fn(n, n, |r, c| a[r][c] as f64);
            let info = semisimple_zero(&SquareMatrix::new(m).unwrap(), DEFAULT_TOL_ZERO);
            assert_eq!(info.semisimple, exact, "{a:?}");
            assert_eq!(info.kernel_dim, n - exact_rank(&a), "{a:?}");
            checked += 1;
        }
    }
    assert_eq!(checked, 75);
}

#[test]
fn restricted_operators_keep_their_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        // eigenvalues {0, 0, 1.5, 2, −1} conjugated by a random well-conditioned matrix
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.0, 0.0, 1.5, 2.0, -1.0]));
        let p = DMatrix::<f64>::identity(5, 5) + DMatrix::from_fn(5, 5, |_, _| rng.gen_range(-0.3..0.3));
        let a = &p * d * p.clone().try_inverse().unwrap();
        let sq = SquareMatrix::new(a.clone()).unwrap();
        let rep = eigen_decompose(&sq, DEFAULT_TOL_ZERO, DEFAULT_GAP).unwrap();
        let split = spectral_projections(&sq, &rep).unwrap();
        assert_eq!(split.dims, (2, 2, 1));
        for (g, restricted) in [(SpectralGroup::Stable, &split.as_), (SpectralGroup::Unstable, &split.au)] {
            let sub = eigen_decompose(&SquareMatrix::new(restricted.clone()).unwrap(), DEFAULT_TOL_ZERO, DEFAULT_GAP).unwrap();
            let mut want: Vec<f64> = rep.group(g).iter().map(|l| l.re).collect();
            let mut got: Vec<f64> = sub.eigenvalues.iter().map(|l| l.re).collect();
            want.sort_by(|x, y| x.partial_cmp(y).unwrap());
            got.sort_by(|x, y| x.partial_cmp(y).unwrap());
            assert_eq!(want.len(), got.len());
            for (x, y) in want.iter().zip(&got) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        assert!(split.ac.amax() < 1e-9);
        let id = DMatrix::<f64>::identity(5, 5);
        assert!((&split.pc + &split.ps + &split.pu - id).amax() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projections_are_invariant(entries in proptest::collection::vec(-1.0f64..1.0, 16), shift in 0.2f64..2.0) {
        // a singular matrix with one zero eigenvalue and the rest pushed off the axis
        let b = DMatrix::from_vec(4, 4, entries);
        let q = b.clone().qr().q();
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.0, shift, -shift, 2.0 * shift]));
        let a = &q * d * q.transpose();
        let sq = SquareMatrix::new(a.clone()).unwrap();
        let rep = eigen_decompose(&sq, DEFAULT_TOL_ZERO, DEFAULT_GAP).unwrap();
        prop_assert!(!rep.inconclusive);
        let split = spectral_projections(&sq, &rep).unwrap();
        prop_assert_eq!(split.dims, (1, 2, 1));
        for p in [&split.pc, &split.ps, &split.pu] {
            prop_assert!((p * p - p).amax() < 1e-8);
            prop_assert!((&a * p - p * &a).amax() < 1e-8 * a.amax().max(1.0));
        }
    }
}
