use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{linearize, ManifoldChart, NormalFormError, Tolerances, VectorFieldSpec};
use crate::spectral::{eigen_decompose, semisimple_zero, SpectrumReport, SquareMatrix, ZeroEigenInfo};

/// Chart samples per coordinate used for the equilibrium-residual test.
const CHART_SAMPLES_PER_DIM: usize = 9;
/// Sampled parameters stay inside this fraction of the chart radius.
const CHART_SAMPLE_FRACTION: f64 = 0.5;

/// The four conditions checked at an equilibrium on a manifold of equilibria.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    /// Equilibria near `u_*` form a manifold of dimension m (chart residual
    /// and rank).
    ManifoldOfEquilibria,
    /// The tangent space equals `N(A₀)`.
    TangentIsKernel,
    /// Zero is a semi-simple eigenvalue.
    SemisimpleZero,
    /// No nonzero eigenvalue on (or too close to) the imaginary axis, and
    /// for normal stability no unstable eigenvalue either.
    SpectralGap,
}

impl Condition {
    pub fn label(&self) -> &'static str {
        match self {
            Condition::ManifoldOfEquilibria => "(i)",
            Condition::TangentIsKernel => "(ii)",
            Condition::SemisimpleZero => "(iii)",
            Condition::SpectralGap => "(iv)",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailedCondition {
    pub condition: Condition,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    NormallyStable,
    NormallyHyperbolic,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::NormallyStable => "NormallyStable",
            Verdict::NormallyHyperbolic => "NormallyHyperbolic",
            Verdict::Inconclusive => "Inconclusive",
        })
    }
}

/// Comparison of the chart tangent space with the kernel of `A₀`.
#[derive(Debug, Clone)]
pub struct TangentCheck {
    pub contained: bool,
    pub equal: bool,
    /// Principal angles (radians, descending) between the tangent space and
    /// its projection onto the kernel; one per tangent direction.
    pub angles: Vec<f64>,
    pub chart_dim: usize,
    pub kernel_dim: usize,
}

impl TangentCheck {
    pub fn max_angle(&self) -> f64 {
        self.angles.iter().cloned().fold(0.0, f64::max)
    }
}

/// Outcome of [`classify`] with every intermediate diagnostic attached.
#[derive(Debug, Clone)]
pub struct Classification {
    pub verdict: Verdict,
    pub failed: Vec<FailedCondition>,
    /// `(m_c, m_s, m_u)` from the eigenvalue groups; zero when the spectrum
    /// could not be computed.
    pub dims: (usize, usize, usize),
    pub u_star: Vec<f64>,
    pub a0: Option<SquareMatrix>,
    pub spectrum: Option<SpectrumReport>,
    pub zero: Option<ZeroEigenInfo>,
    pub tangent: Option<TangentCheck>,
    pub chart_residual: Option<f64>,
    pub chart_rank: Option<usize>,
    pub tolerances: Tolerances,
}

impl Classification {
    pub fn failed_conditions(&self) -> Vec<Condition> {
        let mut c: Vec<Condition> = self.failed.iter().map(|f| f.condition).collect();
        c.sort();
        c.dedup();
        c
    }

    pub fn eigenvalues(&self) -> &[Complex64] {
        self.spectrum.as_ref().map(|s| s.eigenvalues.as_slice()).unwrap_or(&[])
    }
}

fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.ncols() == 0 {
        return 0;
    }
    let s = m.singular_values();
    let smax = s.iter().cloned().fold(0.0, f64::max);
    // floored at 1 so a vanishing derivative is not rescued by its own scale
    s.iter().filter(|v| **v > rel_tol * smax.max(1.0)).count()
}

/// Compares `range(Ψ'(0))` with `N(A₀)` through principal angles.
///
/// `contained` holds when every tangent direction lies in the kernel up to
/// `angle_tol`; `equal` additionally requires matching dimensions.
pub fn tangent_kernel_check(
    chart: &ManifoldChart,
    a0: &SquareMatrix,
    tol_zero: f64,
    angle_tol: f64,
) -> Result<TangentCheck, NormalFormError> {
    let m = chart.dim();
    if chart.ambient_dim() != a0.dim() {
        return Err(NormalFormError::DimensionMismatch { expected: a0.dim(), got: chart.ambient_dim() });
    }
    let zero = semisimple_zero(a0, tol_zero);
    let kernel = &zero.kernel_basis;
    if m == 0 {
        return Ok(TangentCheck {
            contained: true,
            equal: zero.kernel_dim == 0,
            angles: Vec::new(),
            chart_dim: 0,
            kernel_dim: zero.kernel_dim,
        });
    }
    let d = chart.derivative(&vec![0.0; m]);
    let rank = numerical_rank(&d, 1e-8);
    if rank < m {
        return Err(NormalFormError::RankDeficientChart { rank, expected: m });
    }
    let tangent = crate::linalg::orthonormal_columns(&d, 1e-8);
    // sine of each principal angle = singular values of the part of the
    // tangent basis orthogonal to the kernel; accurate for tiny angles
    let residual = &tangent - kernel * (kernel.transpose() * &tangent);
    let mut angles: Vec<f64> = residual.singular_values().iter().map(|s| s.min(1.0).asin()).collect();
    angles.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let contained = m <= zero.kernel_dim && angles.iter().all(|a| *a <= angle_tol);
    Ok(TangentCheck { contained, equal: contained && m == zero.kernel_dim, angles, chart_dim: m, kernel_dim: zero.kernel_dim })
}

/// Checks conditions (i)–(iv) at `u_* = Ψ(0)` and returns the verdict.
///
/// Errors from sub-steps do not abort: they are recorded against the
/// condition they prevent from being checked and the verdict becomes
/// `Inconclusive`.
pub fn classify(fs: &VectorFieldSpec, chart: &ManifoldChart, tol: &Tolerances) -> Classification {
    let u_star = chart.base_point();
    let mut out = Classification {
        verdict: Verdict::Inconclusive,
        failed: Vec::new(),
        dims: (0, 0, 0),
        u_star: u_star.clone(),
        a0: None,
        spectrum: None,
        zero: None,
        tangent: None,
        chart_residual: None,
        chart_rank: None,
        tolerances: *tol,
    };
    let fail = |out: &mut Classification, c: Condition, detail: String| {
        out.failed.push(FailedCondition { condition: c, detail });
    };

    if chart.ambient_dim() != fs.dim() {
        fail(
            &mut out,
            Condition::ManifoldOfEquilibria,
            format!("chart maps into R^{} but the field lives in R^{}", chart.ambient_dim(), fs.dim()),
        );
        return out;
    }

    // (i)
    let params = chart.sample_parameters(CHART_SAMPLES_PER_DIM, CHART_SAMPLE_FRACTION);
    let residual = chart.equilibrium_residual(fs, &params);
    out.chart_residual = Some(residual);
    if !(residual <= tol.eps_eq) {
        fail(
            &mut out,
            Condition::ManifoldOfEquilibria,
            format!("equilibrium residual {residual:.3e} on sampled chart points exceeds {:.1e}", tol.eps_eq),
        );
    }
    if chart.dim() > 0 {
        let rank = numerical_rank(&chart.derivative(&vec![0.0; chart.dim()]), 1e-8);
        out.chart_rank = Some(rank);
        if rank < chart.dim() {
            fail(&mut out, Condition::ManifoldOfEquilibria, format!("chart derivative has rank {rank} < {}", chart.dim()));
        }
    } else {
        out.chart_rank = Some(0);
    }

    let a0 = match linearize(fs, &u_star, tol.eps_eq) {
        Ok(a) => a,
        Err(e) => {
            fail(&mut out, Condition::ManifoldOfEquilibria, e.to_string());
            return out;
        }
    };

    // (iii)
    let zero = semisimple_zero(&a0, tol.tol_zero);
    if !zero.semisimple {
        fail(
            &mut out,
            Condition::SemisimpleZero,
            format!("kernel of dimension {} meets the range: zero is not semi-simple", zero.kernel_dim),
        );
    }

    // (ii)
    match tangent_kernel_check(chart, &a0, tol.tol_zero, tol.angle_tol) {
        Ok(t) => {
            if !t.equal {
                let detail = if !t.contained {
                    format!("tangent space leaves the kernel (max angle {:.3e} rad)", t.max_angle())
                } else {
                    format!("kernel dimension {} exceeds manifold dimension {}", t.kernel_dim, t.chart_dim)
                };
                fail(&mut out, Condition::TangentIsKernel, detail);
            }
            out.tangent = Some(t);
        }
        Err(e) => fail(&mut out, Condition::TangentIsKernel, e.to_string()),
    }

    // (iv)
    // a defective zero splits into eigenvalues of size ~sqrt(round-off)
    let zero_band =
        if zero.semisimple { tol.tol_zero } else { tol.tol_zero.sqrt().min(0.5 * tol.gap / a0.max_abs().max(1.0)).max(tol.tol_zero) };
    match eigen_decompose(&a0, zero_band, tol.gap) {
        Ok(report) => {
            if report.inconclusive {
                let bad: Vec<String> = report
                    .eigenvalues
                    .iter()
                    .zip(&report.groups)
                    .filter(|(_, g)| **g == crate::spectral::SpectralGroup::Ambiguous)
                    .map(|(l, _)| format!("{:.3e}{:+.3e}i", l.re, l.im))
                    .collect();
                fail(
                    &mut out,
                    Condition::SpectralGap,
                    format!("eigenvalues within the gap band of the imaginary axis: {}", bad.join(", ")),
                );
            }
            out.dims = report.dims();
            if zero.semisimple && report.dims().0 != zero.kernel_dim {
                fail(
                    &mut out,
                    Condition::SemisimpleZero,
                    format!("center group has {} eigenvalues but the kernel has dimension {}", report.dims().0, zero.kernel_dim),
                );
            }
            out.spectrum = Some(report);
        }
        Err(e) => fail(&mut out, Condition::SpectralGap, e.to_string()),
    }

    out.zero = Some(zero);
    out.a0 = Some(a0);
    if out.failed.is_empty() {
        out.verdict = if out.dims.2 == 0 { Verdict::NormallyStable } else { Verdict::NormallyHyperbolic };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diagonal_field(d: Vec<f64>) -> VectorFieldSpec {
        let n = d.len();
        let dd = d.clone();
        VectorFieldSpec::new(
            "diagonal",
            n,
            move |u, out| {
                for i in 0..n {
                    out[i] = -dd[i] * u[i];
                }
            },
            vec![0.0; n],
            10.0,
        )
    }

    #[test]
    fn plane_chart_aligned_with_kernel() {
        // u̇ = -diag(0, 0, 3) u: every point of the (u0, u1) plane is an equilibrium
        let fs = diagonal_field(vec![0.0, 0.0, 3.0]);
        let chart = ManifoldChart::new("plane", 2, 3, |z| vec![z[0], z[1], 0.0], 1.0);
        let a0 = linearize(&fs, &[0.0; 3], 1e-12).unwrap();
        let t = tangent_kernel_check(&chart, &a0, 1e-9, 1e-6).unwrap();
        assert!(t.equal, "{t:?}");
        let c = classify(&fs, &chart, &Tolerances::default());
        assert_eq!(c.verdict, Verdict::NormallyStable);
        assert_eq!(c.dims, (2, 1, 0));
    }

    #[test]
    fn misaligned_chart_is_not_contained() {
        let fs = diagonal_field(vec![0.0, 1.0]);
        let a0 = linearize(&fs, &[0.0; 2], 1e-12).unwrap();
        let chart = ManifoldChart::new("diag-line", 1, 2, |z| vec![z[0], z[0]], 1.0);
        let t = tangent_kernel_check(&chart, &a0, 1e-9, 1e-6).unwrap();
        assert!(!t.contained && !t.equal);
        assert!((t.max_angle() - std::f64::consts::FRAC_PI_4).abs() < 1e-8);
        // the chart points are not equilibria either
        let c = classify(&fs, &chart, &Tolerances::default());
        assert_eq!(c.failed_conditions(), vec![Condition::ManifoldOfEquilibria, Condition::TangentIsKernel]);
    }

    #[test]
    fn degenerate_chart_is_rank_deficient() {
        let fs = diagonal_field(vec![0.0, 1.0]);
        let a0 = linearize(&fs, &[0.0; 2], 1e-12).unwrap();
        let chart = ManifoldChart::new("flat", 1, 2, |z| vec![z[0].powi(3), 0.0], 1.0);
        assert!(matches!(tangent_kernel_check(&chart, &a0, 1e-9, 1e-6), Err(NormalFormError::RankDeficientChart { rank: 0, expected: 1 })));
    }

    #[test]
    fn isolated_equilibrium_reduces_to_linear_stability() {
        let stable = diagonal_field(vec![1.0, 2.0]);
        let c = classify(&stable, &ManifoldChart::point(vec![0.0, 0.0]), &Tolerances::default());
        assert_eq!(c.verdict, Verdict::NormallyStable);
        assert_eq!(c.dims, (0, 2, 0));

        let saddle = diagonal_field(vec![1.0, -2.0]);
        let c = classify(&saddle, &ManifoldChart::point(vec![0.0, 0.0]), &Tolerances::default());
        assert_eq!(c.verdict, Verdict::NormallyHyperbolic);

        // a kernel without a manifold violates (ii)
        let degenerate = diagonal_field(vec![0.0, 2.0]);
        let c = classify(&degenerate, &ManifoldChart::point(vec![0.0, 0.0]), &Tolerances::default());
        assert_eq!(c.failed_conditions(), vec![Condition::TangentIsKernel]);
    }

    #[test]
    fn near_imaginary_axis_is_inconclusive() {
        let fs = diagonal_field(vec![1e-7, 2.0]);
        let c = classify(&fs, &ManifoldChart::point(vec![0.0, 0.0]), &Tolerances::default());
        assert_eq!(c.verdict, Verdict::Inconclusive);
        assert!(c.failed_conditions().contains(&Condition::SpectralGap));
    }

    #[test]
    fn non_equilibrium_base_point() {
        let fs = diagonal_field(vec![1.0, 2.0]);
        let c = classify(&fs, &ManifoldChart::point(vec![1.0, 0.0]), &Tolerances::default());
        assert_eq!(c.verdict, Verdict::Inconclusive);
        assert_eq!(c.failed_conditions(), vec![Condition::ManifoldOfEquilibria]);
        assert!(c.a0.is_none());
    }
}
