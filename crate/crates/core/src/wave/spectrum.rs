//! Finite-difference linearization around the wave and its spectrum.

use super::{WaveError, WaveProfile, EPS_TAIL};
use crate::linalg::norm2;
use crate::spectral::tridiag::{symmetrizable_eigen, Tridiagonal};
use crate::spectral::SquareMatrix;

/// Share of the discrete mass inside `|s| ≤ L/2` above which an eigenvector
/// counts as attached to the front.
pub const LOCALIZED_MASS: f64 = 0.9;

/// `A₀v = −(σ'(w')v')' + Vv' − f'(w)v` on the interior nodes of `[−L, L]`
/// with homogeneous Dirichlet closure.
#[derive(Debug, Clone)]
pub struct DiscreteLinearization {
    pub l: f64,
    pub h: f64,
    pub grid: Vec<f64>,
    pub matrix: Tridiagonal,
    /// `w'` sampled on the grid.
    pub w_prime: Vec<f64>,
}

impl DiscreteLinearization {
    pub fn n(&self) -> usize {
        self.grid.len()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.matrix.apply(v)
    }

    pub fn to_square(&self) -> SquareMatrix {
        self.matrix.to_matrix()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |v: &[f64]| v.iter().map(|x| x * factor).collect();
        Self {
            matrix: Tridiagonal { sub: scale(&self.matrix.sub), diag: scale(&self.matrix.diag), sup: scale(&self.matrix.sup) },
            ..self.clone()
        }
    }

    /// `‖A₀w'‖ / ‖w'‖`.
    pub fn kernel_residual(&self) -> f64 {
        norm2(&self.apply(&self.w_prime)) / norm2(&self.w_prime)
    }
}

/// Tridiagonal operator with flux coefficients `c` at the `n + 1` half
/// nodes and reaction `q` at the `n` nodes:
/// `(Av)_i = −[c_{i+½}(v_{i+1} − v_i) − c_{i−½}(v_i − v_{i−1})]/h² + V(v_{i+1} − v_{i−1})/(2h) + q_i v_i`.
pub(crate) fn assemble(c: &[f64], q: &[f64], v: f64, h: f64) -> Tridiagonal {
    let n = q.len();
    let h2 = h * h;
    Tridiagonal {
        sub: (0..n - 1).map(|k| -c[k + 1] / h2 - v / (2.0 * h)).collect(),
        diag: (0..n).map(|k| (c[k] + c[k + 1]) / h2 + q[k]).collect(),
        sup: (0..n - 1).map(|k| -c[k + 1] / h2 + v / (2.0 * h)).collect(),
    }
}

pub fn discretize_linearization(profile: &WaveProfile, l: f64, n: usize) -> Result<DiscreteLinearization, WaveError> {
    if !(l > 0.0) || n < 3 {
        return Err(WaveError::InvalidParameter(format!("need L > 0 and N ≥ 3 (got L = {l}, N = {n})")));
    }
    profile.check(l, EPS_TAIL)?;
    let wp = &profile.problem;
    let h = 2.0 * l / (n + 1) as f64;
    let grid: Vec<f64> = (1..=n).map(|i| -l + i as f64 * h).collect();
    let c: Vec<f64> = (0..=n).map(|j| wp.sigma.derivative(profile.eval(-l + (j as f64 + 0.5) * h).1)).collect();
    let samples: Vec<(f64, f64)> = grid.iter().map(|s| profile.eval(*s)).collect();
    let q: Vec<f64> = samples.iter().map(|(w, _)| -wp.df(*w)).collect();
    Ok(DiscreteLinearization { l, h, matrix: assemble(&c, &q, profile.v, h), w_prime: samples.iter().map(|(_, z)| *z).collect(), grid })
}

#[derive(Debug, Clone)]
pub struct WaveSpectrumReport {
    pub l: f64,
    pub n: usize,
    /// Ascending; the operator is similar to a symmetric one, so all are real.
    pub eigenvalues: Vec<f64>,
    pub zero_mode_index: usize,
    pub zero_mode_gap: f64,
    /// `|cos|` of the angle between the zero-mode eigenvector and `w'`.
    pub zero_mode_correlation: f64,
    /// Smallest eigenvalue other than the zero mode.
    pub stable_margin: f64,
    /// Per eigenvalue: at least [`LOCALIZED_MASS`] of the mass in `|s| ≤ L/2`.
    pub localized: Vec<bool>,
    /// Smallest eigenvalue among the non-localized ones.
    pub essential_min: Option<f64>,
}

impl WaveSpectrumReport {
    /// Every non-localized eigenvalue is at least `a − eps_spec`.
    pub fn essential_bound_holds(&self, a: f64, eps_spec: f64) -> bool {
        self.essential_min.is_none_or(|m| m >= a - eps_spec)
    }
}

pub fn wave_spectrum(lin: &DiscreteLinearization) -> Result<WaveSpectrumReport, WaveError> {
    let eig = symmetrizable_eigen(&lin.matrix, true)?;
    let vecs = eig.eigenvectors.expect("requested eigenvectors");
    let lams = eig.eigenvalues;
    let zero = (0..lams.len()).min_by(|&i, &j| lams[i].abs().partial_cmp(&lams[j].abs()).unwrap()).expect("nonempty spectrum");
    let wn = norm2(&lin.w_prime);
    let e = &vecs[zero];
    let dot: f64 = e.iter().zip(&lin.w_prime).map(|(a, b)| a * b).sum();
    let correlation = dot.abs() / (norm2(e) * wn);
    let half = 0.5 * lin.l;
    let localized: Vec<bool> = vecs
        .iter()
        .map(|v| {
            let total: f64 = v.iter().map(|x| x * x).sum();
            let inner: f64 = v.iter().zip(&lin.grid).filter(|(_, s)| s.abs() <= half).map(|(x, _)| x * x).sum();
            inner >= LOCALIZED_MASS * total
        })
        .collect();
    let stable_margin = lams.iter().enumerate().filter(|(i, _)| *i != zero).map(|(_, l)| *l).fold(f64::INFINITY, f64::min);
    let essential_min = lams.iter().zip(&localized).filter(|(_, loc)| !**loc).map(|(l, _)| *l).reduce(f64::min);
    Ok(WaveSpectrumReport {
        l: lin.l,
        n: lin.n(),
        zero_mode_gap: lams[zero].abs(),
        zero_mode_index: zero,
        zero_mode_correlation: correlation,
        stable_margin,
        localized,
        essential_min,
        eigenvalues: lams,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{Sigma, WaveProblem};
    use super::*;

    fn exact_profile() -> WaveProfile {
        let wp = WaveProblem::new(0.25, Sigma::Identity).unwrap();
        WaveProfile::build(&wp, 0.5 / 2f64.sqrt()).unwrap()
    }

    #[test]
    fn constant_coefficients_give_shifted_dirichlet_laplacian() {
        let (l, n, a) = (5.0, 200, 0.25);
        let h = 2.0 * l / (n + 1) as f64;
        let t = assemble(&vec![1.0; n + 1], &vec![a; n], 0.0, h);
        let eig = symmetrizable_eigen(&t, false).unwrap();
        for k in 1..=5 {
            let exact = a + (k as f64 * std::f64::consts::PI / (2.0 * l)).powi(2);
            assert!((eig.eigenvalues[k - 1] - exact).abs() < 1e-3 * exact, "k = {k}");
        }
        // divergence form annihilates constants on interior rows
        let t0 = assemble(&vec![1.3; n + 1], &vec![0.0; n], 0.0, h);
        let r = t0.apply(&vec![1.0; n]);
        assert!(r[1..n - 1].iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn derivative_of_the_wave_is_nearly_in_the_kernel() {
        let p = exact_profile();
        let lin = discretize_linearization(&p, 40.0, 2000).unwrap();
        assert!(lin.kernel_residual() <= 1e-3, "{}", lin.kernel_residual());
        // first-order tangency of the translates
        let ratios: Vec<f64> = [0.4, 0.2, 0.1, 0.05]
            .iter()
            .map(|&alpha| {
                let d: Vec<f64> = lin.grid.iter().map(|s| p.w_at(s + alpha) - p.w_at(*s)).collect();
                norm2(&lin.apply(&d)) / (alpha * norm2(&lin.w_prime))
            })
            .collect();
        assert!(ratios.windows(2).all(|r| r[1] < r[0]), "{ratios:?}");
        assert!(ratios[3] < 0.25 * ratios[0]);
    }

    #[test]
    fn spectrum_at_the_wave() {
        let p = exact_profile();
        let lin = discretize_linearization(&p, 40.0, 2000).unwrap();
        let rep = wave_spectrum(&lin).unwrap();
        assert!(rep.zero_mode_gap <= 1e-3);
        assert!(rep.zero_mode_correlation >= 0.999);
        assert!(rep.stable_margin > 0.0);
        assert!(rep.essential_bound_holds(0.25, 0.05));

        let twice = wave_spectrum(&lin.scaled(2.0)).unwrap();
        for (x, y) in rep.eigenvalues.iter().zip(&twice.eigenvalues) {
            assert!((2.0 * x - y).abs() < 1e-9 * (1.0 + y.abs()));
        }
        assert!((twice.zero_mode_correlation - rep.zero_mode_correlation).abs() < 1e-9);
    }

    #[test]
    fn refinement_ladder() {
        let p = exact_profile();
        let reps: Vec<WaveSpectrumReport> =
            [250, 500, 1000].iter().map(|&n| wave_spectrum(&discretize_linearization(&p, 40.0, n).unwrap()).unwrap()).collect();
        for w in reps.windows(2) {
            assert!(w[1].zero_mode_gap < w[0].zero_mode_gap);
            assert!(w[1].zero_mode_correlation > w[0].zero_mode_correlation);
        }
    }

    #[test]
    fn short_domain_is_rejected() {
        let p = exact_profile();
        assert!(matches!(discretize_linearization(&p, 8.0, 100), Err(WaveError::TailsTooFat { .. })));
    }
}
