//! Eigenproblems of real tridiagonal matrices whose off-diagonal products are
//! positive. A diagonal similarity makes them symmetric, so the spectrum is
//! real and an implicit QL sweep plus inverse iteration is O(n²) overall.

use super::{SpectralError, SquareMatrix};
use crate::linalg::solve_tridiagonal;

const QL_MAX_SWEEPS: usize = 60;
const INVERSE_ITERATIONS: usize = 3;

/// Three-diagonal storage: `sub[i] = A[i+1][i]`, `sup[i] = A[i][i+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

impl Tridiagonal {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// Extracts the three diagonals if every other entry is exactly zero.
    pub fn from_matrix(a: &SquareMatrix) -> Option<Self> {
        let m = a.as_matrix();
        let n = a.dim();
        for j in 0..n {
            for i in 0..n {
                if (i as isize - j as isize).abs() > 1 && m[(i, j)] != 0.0 {
                    return None;
                }
            }
        }
        Some(Self {
            sub: (0..n.saturating_sub(1)).map(|i| m[(i + 1, i)]).collect(),
            diag: (0..n).map(|i| m[(i, i)]).collect(),
            sup: (0..n.saturating_sub(1)).map(|i| m[(i, i + 1)]).collect(),
        })
    }

    pub fn to_matrix(&self) -> SquareMatrix {
        let n = self.n();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i + 1, i)] = self.sub[i];
                m[(i, i + 1)] = self.sup[i];
            }
        }
        SquareMatrix::new(m).expect("finite tridiagonal entries")
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * v[i];
                if i > 0 {
                    s += self.sub[i - 1] * v[i - 1];
                }
                if i + 1 < n {
                    s += self.sup[i] * v[i + 1];
                }
                s
            })
            .collect()
    }

    /// True when every `sub[i]·sup[i] > 0`.
    pub fn is_symmetrizable(&self) -> bool {
        self.sub.iter().zip(&self.sup).all(|(l, u)| l * u > 0.0)
    }
}

/// Eigenvalues in ascending order, eigenvectors of the original
/// (non-symmetric) matrix normalized to unit 2-norm.
#[derive(Debug, Clone)]
pub struct TridiagonalEigen {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Option<Vec<Vec<f64>>>,
}

/// Solves the eigenproblem of a symmetrizable tridiagonal matrix.
pub fn symmetrizable_eigen(t: &Tridiagonal, with_vectors: bool) -> Result<TridiagonalEigen, SpectralError> {
    let n = t.n();
    if n == 0 {
        return Err(SpectralError::InvalidMatrix("empty".into()));
    }
    if !t.is_symmetrizable() {
        return Err(SpectralError::InvalidMatrix("off-diagonal products must be positive".into()));
    }
    // D^-1 A D symmetric with d[i+1] = d[i] sqrt(sub/sup); work with log d to
    // avoid overflow on long grids.
    let off: Vec<f64> = t.sub.iter().zip(&t.sup).map(|(l, u)| u.signum() * (l * u).sqrt()).collect();
    let mut log_d = vec![0.0; n];
    for i in 1..n {
        log_d[i] = log_d[i - 1] + 0.5 * (t.sub[i - 1] / t.sup[i - 1]).ln();
    }

    let mut eigenvalues = t.diag.clone();
    tql_eigenvalues(&mut eigenvalues, &off)?;
    eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let eigenvectors = if with_vectors {
        let scale = eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
        let shift_eps = 1e-13 * scale;
        let max_log = log_d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut vecs = Vec::with_capacity(n);
        for &lam in &eigenvalues {
            let u = inverse_iteration(&t.diag, &off, lam + shift_eps);
            let mut v: Vec<f64> = u.iter().zip(&log_d).map(|(x, ld)| x * (ld - max_log).exp()).collect();
            let nv = crate::linalg::norm2(&v);
            if nv > 0.0 {
                v.iter_mut().for_each(|x| *x /= nv);
            }
            vecs.push(v);
        }
        Some(vecs)
    } else {
        None
    };
    Ok(TridiagonalEigen { eigenvalues, eigenvectors })
}

fn inverse_iteration(diag: &[f64], off: &[f64], shift: f64) -> Vec<f64> {
    let n = diag.len();
    let shifted: Vec<f64> = diag.iter().map(|d| d - shift).collect();
    // deterministic start with components in every direction
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.61).sin()).collect();
    for _ in 0..INVERSE_ITERATIONS {
        let y = match solve_tridiagonal(off, &shifted, off, &x) {
            Some(y) => y,
            None => {
                // shift hit an exact eigenvalue; nudge it
                let nudged: Vec<f64> = shifted.iter().map(|d| d - 1e-12).collect();
                solve_tridiagonal(off, &nudged, off, &x).unwrap_or_else(|| x.clone())
            }
        };
        let ny = crate::linalg::norm2(&y);
        if !(ny > 0.0) || !ny.is_finite() {
            break;
        }
        x = y.into_iter().map(|v| v / ny).collect();
    }
    x
}

/// Implicit QL iteration on a symmetric tridiagonal matrix; `d` holds the
/// diagonal on entry and the eigenvalues on exit.
fn tql_eigenvalues(d: &mut [f64], off: &[f64]) -> Result<(), SpectralError> {
    let n = d.len();
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(&off[..n - 1]);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > QL_MAX_SWEEPS {
                return Err(SpectralError::NonConvergence(QL_MAX_SWEEPS));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{eigen_decompose, DEFAULT_GAP, DEFAULT_TOL_ZERO};

    fn advection_diffusion(n: usize) -> Tridiagonal {
        let h = 1.0 / (n as f64 + 1.0);
        let v = 3.0;
        Tridiagonal {
            sub: vec![-1.0 / (h * h) - v / (2.0 * h); n - 1],
            diag: (0..n).map(|i| 2.0 / (h * h) + (i as f64 * 0.1).sin()).collect(),
            sup: vec![-1.0 / (h * h) + v / (2.0 * h); n - 1],
        }
    }

    #[test]
    fn agrees_with_dense_schur() {
        let t = advection_diffusion(40);
        let fast = symmetrizable_eigen(&t, false).unwrap();
        let dense = eigen_decompose(&t.to_matrix(), DEFAULT_TOL_ZERO, DEFAULT_GAP).unwrap();
        for (a, b) in fast.eigenvalues.iter().zip(&dense.eigenvalues) {
            assert!(b.im.abs() < 1e-8);
            assert!((a - b.re).abs() < 1e-8 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn eigenvectors_satisfy_eigen_equation() {
        let t = advection_diffusion(60);
        let e = symmetrizable_eigen(&t, true).unwrap();
        let vecs = e.eigenvectors.unwrap();
        for (lam, v) in e.eigenvalues.iter().zip(&vecs).step_by(7) {
            let av = t.apply(v);
            let r: f64 = av.iter().zip(v).map(|(a, x)| (a - lam * x).powi(2)).sum::<f64>().sqrt();
            assert!(r < 1e-7 * lam.abs().max(1.0), "residual {r} at {lam}");
        }
    }

    #[test]
    fn dirichlet_laplacian_closed_form() {
        let n = 50;
        let h = 1.0 / (n as f64 + 1.0);
        let t = Tridiagonal { sub: vec![-1.0 / (h * h); n - 1], diag: vec![2.0 / (h * h); n], sup: vec![-1.0 / (h * h); n - 1] };
        let e = symmetrizable_eigen(&t, false).unwrap();
        for (k, lam) in e.eigenvalues.iter().enumerate() {
            let theta = (k as f64 + 1.0) * std::f64::consts::PI * h;
            let exact = (2.0 - 2.0 * theta.cos()) / (h * h);
            assert!((lam - exact).abs() < 1e-9 * exact);
        }
    }

    #[test]
    fn detects_structure() {
        let t = advection_diffusion(5);
        assert_eq!(Tridiagonal::from_matrix(&t.to_matrix()), Some(t));
        assert!(
            Tridiagonal::from_matrix(&SquareMatrix::from_rows(&[&[1.0, 0.0, 1.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]).unwrap()).is_none()
        );
    }
}
