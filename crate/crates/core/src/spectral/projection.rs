use nalgebra::DMatrix;

use super::schur::ordered_schur;
use super::{SpectralError, SpectralGroup, SpectrumReport, SquareMatrix, DEFAULT_EPS_PROJ};

/// Spectral projections onto the center, stable and unstable invariant
/// subspaces, with the restricted operators on bases of their ranges.
///
/// For each group `g`, `basis_g` (n×m_g) spans `range(P_g)` and `coords_g`
/// (m_g×n) recovers coordinates in that basis, so `P_g = basis_g · coords_g`
/// and `A_g = coords_g · A · basis_g`.
#[derive(Debug, Clone)]
pub struct SpectralSplit {
    pub pc: DMatrix<f64>,
    pub ps: DMatrix<f64>,
    pub pu: DMatrix<f64>,
    pub ac: DMatrix<f64>,
    pub as_: DMatrix<f64>,
    pub au: DMatrix<f64>,
    pub basis_c: DMatrix<f64>,
    pub basis_s: DMatrix<f64>,
    pub basis_u: DMatrix<f64>,
    pub coords_c: DMatrix<f64>,
    pub coords_s: DMatrix<f64>,
    pub coords_u: DMatrix<f64>,
    pub dims: (usize, usize, usize),
    /// Largest violation among idempotence, completeness, mutual
    /// annihilation and commutation with `A`.
    pub max_violation: f64,
}

impl SpectralSplit {
    pub fn n(&self) -> usize {
        self.pc.nrows()
    }

    /// Basis of the stable ⊕ unstable complement of the center subspace.
    pub fn basis_su(&self) -> DMatrix<f64> {
        hcat(&self.basis_s, &self.basis_u)
    }

    pub fn coords_su(&self) -> DMatrix<f64> {
        vcat(&self.coords_s, &self.coords_u)
    }

    /// Block-diagonal restriction of `A` to the stable ⊕ unstable complement.
    pub fn a_su(&self) -> DMatrix<f64> {
        let (ms, mu) = (self.dims.1, self.dims.2);
        let mut out = DMatrix::zeros(ms + mu, ms + mu);
        out.view_mut((0, 0), (ms, ms)).copy_from(&self.as_);
        out.view_mut((ms, ms), (mu, mu)).copy_from(&self.au);
        out
    }

    pub fn p_su(&self) -> DMatrix<f64> {
        &self.ps + &self.pu
    }

    /// Recomputes the invariant violations against `a`.
    pub fn violations(&self, a: &DMatrix<f64>) -> f64 {
        let n = self.n();
        let eye = DMatrix::<f64>::identity(n, n);
        let ps = [&self.pc, &self.ps, &self.pu];
        let anorm = a.amax().max(1.0);
        let mut worst: f64 = (&self.pc + &self.ps + &self.pu - &eye).amax();
        for (i, p) in ps.iter().enumerate() {
            worst = worst.max((*p * *p - *p).amax());
            worst = worst.max((a * *p - *p * a).amax() / anorm);
            for q in ps.iter().skip(i + 1) {
                worst = worst.max((*p * *q).amax());
            }
        }
        worst
    }
}

pub(crate) fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows().max(b.nrows()), a.ncols() + b.ncols());
    if a.ncols() > 0 {
        out.columns_mut(0, a.ncols()).copy_from(a);
    }
    if b.ncols() > 0 {
        out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    }
    out
}

pub(crate) fn vcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols().max(b.ncols()));
    if a.nrows() > 0 {
        out.rows_mut(0, a.nrows()).copy_from(a);
    }
    if b.nrows() > 0 {
        out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    }
    out
}

/// Builds the center/stable/unstable projections from ordered Schur forms.
///
/// Each group is moved to the front of its own reordered Schur form, which
/// yields an orthonormal basis of its invariant subspace. The three bases
/// together form an invertible matrix `V`; the rows of `V⁻¹` give the
/// complementary coordinate maps.
pub fn spectral_projections(a: &SquareMatrix, report: &SpectrumReport) -> Result<SpectralSplit, SpectralError> {
    if report.inconclusive {
        let bad = report
            .eigenvalues
            .iter()
            .zip(&report.groups)
            .find(|(_, g)| **g == SpectralGroup::Ambiguous)
            .map(|(l, _)| *l)
            .unwrap_or_default();
        return Err(SpectralError::Inconclusive(bad));
    }
    let n = a.dim();
    let th = report.thresholds;
    let mut bases = Vec::with_capacity(3);
    for group in [SpectralGroup::Center, SpectralGroup::Stable, SpectralGroup::Unstable] {
        let os = ordered_schur(a, |l| th.classify(l) == group)?;
        bases.push(os.leading_basis());
    }
    let dims = (bases[0].ncols(), bases[1].ncols(), bases[2].ncols());
    if dims.0 + dims.1 + dims.2 != n {
        return Err(SpectralError::IllConditioned(format!("group dimensions {dims:?} do not add up to {n}")));
    }
    let v = hcat(&hcat(&bases[0], &bases[1]), &bases[2]);
    let svals = v.singular_values();
    let smin = svals.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smin > 1e-10) {
        return Err(SpectralError::IllConditioned(format!("invariant subspaces nearly coincide (smallest singular value {smin:.3e})")));
    }
    let w = v.clone().try_inverse().ok_or_else(|| SpectralError::IllConditioned("basis matrix is singular".into()))?;
    let coords_c = w.rows(0, dims.0).into_owned();
    let coords_s = w.rows(dims.0, dims.1).into_owned();
    let coords_u = w.rows(dims.0 + dims.1, dims.2).into_owned();
    let am = a.as_matrix();
    let split = SpectralSplit {
        pc: &bases[0] * &coords_c,
        ps: &bases[1] * &coords_s,
        pu: &bases[2] * &coords_u,
        ac: &coords_c * am * &bases[0],
        as_: &coords_s * am * &bases[1],
        au: &coords_u * am * &bases[2],
        basis_c: bases[0].clone(),
        basis_s: bases[1].clone(),
        basis_u: bases[2].clone(),
        coords_c,
        coords_s,
        coords_u,
        dims,
        max_violation: 0.0,
    };
    let violation = split.violations(am);
    // the tolerance grows with the conditioning of the basis
    let cond = svals.iter().cloned().fold(0.0, f64::max) / smin;
    if violation > DEFAULT_EPS_PROJ * cond.max(1.0) {
        return Err(SpectralError::IllConditioned(format!("projection invariants violated by {violation:.3e}")));
    }
    Ok(SpectralSplit { max_violation: violation, ..split })
}
