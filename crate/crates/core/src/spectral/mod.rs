//! Dense real spectral machinery.
//!
//! Eigenvalues come from a real Schur decomposition; spectral projections are
//! built from invariant subspaces obtained by reordering the Schur form so
//! that a chosen eigenvalue group leads. The semi-simplicity test for the zero
//! eigenvalue checks that the numerical kernel meets the range trivially.

mod projection;
mod schur;
pub mod tridiag;

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

pub use projection::{spectral_projections, SpectralSplit};
pub use schur::{ordered_schur, real_schur, OrderedSchur, RealSchur};

pub const DEFAULT_TOL_ZERO: f64 = 1e-9;
pub const DEFAULT_GAP: f64 = 1e-6;
pub const DEFAULT_EPS_PROJ: f64 = 1e-8;

const SCHUR_MAX_ITER_PER_DIM: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("matrix must be square with n >= 1 and finite entries ({0})")]
    InvalidMatrix(String),
    #[error("eigenvalue iteration did not converge within {0} iterations")]
    NonConvergence(usize),
    #[error("spectrum is inconclusive: eigenvalue {0} lies in the band between tol_zero and gap")]
    Inconclusive(Complex64),
    #[error("ill-conditioned spectral separation: {0}")]
    IllConditioned(String),
}

/// Dense real n×n operator.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix(DMatrix<f64>);

impl SquareMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self, SpectralError> {
        if m.nrows() != m.ncols() {
            return Err(SpectralError::InvalidMatrix(format!("{}x{} is not square", m.nrows(), m.ncols())));
        }
        if m.nrows() == 0 {
            return Err(SpectralError::InvalidMatrix("empty".into()));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(SpectralError::InvalidMatrix("non-finite entry".into()));
        }
        Ok(Self(m))
    }

    /// Builds from row-major entries.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, SpectralError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(SpectralError::InvalidMatrix("ragged rows".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(&self.0 * factor)
    }

    /// Entry-wise maximum norm, used to scale absolute tolerances.
    pub fn max_abs(&self) -> f64 {
        self.0.amax()
    }
}

impl std::ops::Index<(usize, usize)> for SquareMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// Group an eigenvalue belongs to, in the `v̇ + A v = 0` convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpectralGroup {
    /// `|λ| ≤ tol_zero`
    Center,
    /// `Re λ ≥ gap`
    Stable,
    /// `Re λ ≤ -gap`
    Unstable,
    /// In neither: the report is inconclusive.
    Ambiguous,
}

/// Thresholds used to sort eigenvalues into groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupThresholds {
    pub tol_zero: f64,
    pub gap: f64,
    /// Multiplies `tol_zero`; `max(1, max|a_ij|)` of the decomposed matrix.
    pub scale: f64,
}

impl GroupThresholds {
    pub fn classify(&self, lambda: Complex64) -> SpectralGroup {
        if lambda.norm() <= self.tol_zero * self.scale {
            SpectralGroup::Center
        } else if lambda.re >= self.gap {
            SpectralGroup::Stable
        } else if lambda.re <= -self.gap {
            SpectralGroup::Unstable
        } else {
            SpectralGroup::Ambiguous
        }
    }
}

/// All eigenvalues of a matrix with their group assignment.
#[derive(Debug, Clone)]
pub struct SpectrumReport {
    /// Eigenvalues repeated according to algebraic multiplicity, sorted by
    /// real part then imaginary part.
    pub eigenvalues: Vec<Complex64>,
    pub groups: Vec<SpectralGroup>,
    /// Smallest `|Re λ|` over the non-center eigenvalues (`inf` if none).
    pub gap_margin: f64,
    pub inconclusive: bool,
    pub thresholds: GroupThresholds,
}

impl SpectrumReport {
    pub fn dims(&self) -> (usize, usize, usize) {
        let count = |g| self.groups.iter().filter(|x| **x == g).count();
        (count(SpectralGroup::Center), count(SpectralGroup::Stable), count(SpectralGroup::Unstable))
    }

    pub fn group(&self, g: SpectralGroup) -> Vec<Complex64> {
        self.eigenvalues.iter().zip(&self.groups).filter(|(_, x)| **x == g).map(|(l, _)| *l).collect()
    }

    /// Distinct eigenvalues with algebraic multiplicities; values closer
    /// than `tol` are merged.
    pub fn distinct(&self, tol: f64) -> Vec<(Complex64, usize)> {
        let mut out: Vec<(Complex64, usize)> = Vec::new();
        for l in &self.eigenvalues {
            match out.iter_mut().find(|(v, _)| (*v - *l).norm() <= tol) {
                Some(entry) => entry.1 += 1,
                None => out.push((*l, 1)),
            }
        }
        out
    }

    /// Smallest real part among the stable group.
    pub fn min_stable_re(&self) -> Option<f64> {
        self.group(SpectralGroup::Stable).iter().map(|l| l.re).min_by(|a, b| a.partial_cmp(b).unwrap())
    }
}

pub(crate) fn sort_eigenvalues(v: &mut [Complex64]) {
    v.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
}

/// Computes every eigenvalue of `a` and sorts them into center, stable and
/// unstable groups.
pub fn eigen_decompose(a: &SquareMatrix, tol_zero: f64, gap: f64) -> Result<SpectrumReport, SpectralError> {
    if !(tol_zero < gap) {
        return Err(SpectralError::InvalidMatrix(format!("tol_zero ({tol_zero}) must be below gap ({gap})")));
    }
    let schur = real_schur(a)?;
    let mut eigenvalues = schur.eigenvalues();
    sort_eigenvalues(&mut eigenvalues);
    Ok(report_from_eigenvalues(eigenvalues, tol_zero, gap, a.max_abs().max(1.0)))
}

pub(crate) fn report_from_eigenvalues(eigenvalues: Vec<Complex64>, tol_zero: f64, gap: f64, scale: f64) -> SpectrumReport {
    let thresholds = GroupThresholds { tol_zero, gap, scale };
    let groups: Vec<SpectralGroup> = eigenvalues.iter().map(|l| thresholds.classify(*l)).collect();
    let gap_margin = eigenvalues
        .iter()
        .zip(&groups)
        .filter(|(_, g)| **g != SpectralGroup::Center)
        .map(|(l, _)| l.re.abs())
        .fold(f64::INFINITY, f64::min);
    let inconclusive = groups.contains(&SpectralGroup::Ambiguous);
    SpectrumReport { eigenvalues, groups, gap_margin, inconclusive, thresholds }
}

/// Result of the zero-eigenvalue semi-simplicity test.
#[derive(Debug, Clone)]
pub struct ZeroEigenInfo {
    pub semisimple: bool,
    pub kernel_dim: usize,
    /// Orthonormal columns spanning the numerical kernel of `A`.
    pub kernel_basis: DMatrix<f64>,
    /// Ratio of the smallest retained singular value of `A` to the rank
    /// threshold; values near 1 flag an ambiguous numerical rank.
    pub rank_margin: f64,
}

fn numerical_nullity(m: &DMatrix<f64>, tol: f64) -> (usize, f64, nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>) {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    // floor at 1 so rounding noise in a (near-)zero matrix does not count
    // as rank
    let threshold = tol * smax.max(1.0);
    let nullity = svd.singular_values.iter().filter(|s| **s <= threshold).count();
    let smallest_kept = svd.singular_values.iter().cloned().filter(|s| *s > threshold).fold(f64::INFINITY, f64::min);
    let margin = if threshold > 0.0 { smallest_kept / threshold } else { f64::INFINITY };
    (nullity, margin, svd)
}

/// Tests whether 0 is a semi-simple eigenvalue, i.e. `ker A ∩ range A = {0}`.
///
/// With `K` spanning the kernel and `L` the left kernel, this holds exactly
/// when `LᵀK` is nonsingular. Squaring `A` instead would push small nonzero
/// singular values below the rank threshold.
pub fn semisimple_zero(a: &SquareMatrix, tol_zero: f64) -> ZeroEigenInfo {
    let m = a.as_matrix();
    let n = a.dim();
    let (nullity, margin, svd) = numerical_nullity(m, tol_zero);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let u = svd.u.expect("left singular vectors requested");
    // sorted descending, so the kernel is spanned by the trailing rows of v_t
    let kernel_basis = DMatrix::from_fn(n, nullity, |r, c| v_t[(n - nullity + c, r)]);
    let left = u.columns(n - nullity, nullity);
    let coupling = left.transpose() * &kernel_basis;
    let semisimple = nullity == 0 || coupling.singular_values().min() > tol_zero.sqrt();
    ZeroEigenInfo { semisimple, kernel_dim: nullity, kernel_basis, rank_margin: margin }
}
