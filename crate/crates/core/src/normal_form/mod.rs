//! Linearization, classification and normal-form coordinates around an
//! equilibrium that sits on a manifold of equilibria.
//!
//! The dynamics are `u̇ = F(u)`. In deviation variables `v = u - u_*` this
//! reads `v̇ + A₀ v = G(v)` with `A₀ = -F'(u_*)` and
//! `G(v) = F(u_* + v) + A₀ v`, so `G(0) = 0` and `G'(0) = 0`.

mod checks;
mod classify;
mod graph;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::spectral::{SpectralError, SquareMatrix};

pub use checks::{structural_invariants, StructuralReport, ON_GRAPH_SAMPLES};
pub use classify::{classify, tangent_kernel_check, Classification, Condition, FailedCondition, TangentCheck, Verdict};
pub use graph::{from_normal_form, normal_form_rhs, solve_graph_map, to_normal_form, GraphMap, GraphPoint, NormalCoords, NormalFormRhs};

pub type RhsFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
pub type JacobianFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;
pub type ChartFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NormalFormError {
    #[error("state is not an equilibrium: |F(u)| = {residual:.3e}")]
    NotAnEquilibrium { residual: f64 },
    #[error("chart derivative has rank {rank}, expected {expected}")]
    RankDeficientChart { rank: usize, expected: usize },
    #[error("Newton iteration for the graph map diverged at |x| = {x_norm:.3e} (residual {residual:.3e})")]
    NewtonDiverged { x_norm: f64, residual: f64 },
    #[error("no radius with |phi'| <= 1 found below {rho0:.3e}")]
    RadiusTooLarge { rho0: f64 },
    #[error("center component |x| = {norm:.3e} exceeds the validity radius {rho0:.3e}")]
    OutOfChart { norm: f64, rho0: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Named tolerances used throughout classification and the graph map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub tol_zero: f64,
    pub gap: f64,
    /// Equilibrium residual bound `|F(u)| ≤ eps_eq`.
    pub eps_eq: f64,
    pub eps_proj: f64,
    pub eps_newton: f64,
    /// Largest principal angle (radians) accepted as "same subspace".
    pub angle_tol: f64,
    /// On-graph identity bound for chart points.
    pub eps_graph: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tol_zero: crate::spectral::DEFAULT_TOL_ZERO,
            gap: crate::spectral::DEFAULT_GAP,
            eps_eq: 1e-8,
            eps_proj: crate::spectral::DEFAULT_EPS_PROJ,
            eps_newton: 1e-11,
            angle_tol: 1e-6,
            eps_graph: 1e-8,
        }
    }
}

impl Tolerances {
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("tol_zero", self.tol_zero),
            ("gap", self.gap),
            ("eps_eq", self.eps_eq),
            ("eps_proj", self.eps_proj),
            ("eps_newton", self.eps_newton),
            ("angle_tol", self.angle_tol),
            ("eps_graph", self.eps_graph),
        ]
    }
}

/// An autonomous vector field `u̇ = F(u)` on a ball around `center`.
#[derive(Clone)]
pub struct VectorFieldSpec {
    pub name: String,
    dim: usize,
    rhs: Arc<RhsFn>,
    jacobian: Option<Arc<JacobianFn>>,
    pub center: Vec<f64>,
    pub domain_radius: f64,
    /// States closer than this to `center` are outside the domain.
    pub hole_radius: f64,
}

impl fmt::Debug for VectorFieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorFieldSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("exact_jacobian", &self.jacobian.is_some())
            .field("center", &self.center)
            .field("domain_radius", &self.domain_radius)
            .field("hole_radius", &self.hole_radius)
            .finish()
    }
}

impl VectorFieldSpec {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        rhs: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        center: Vec<f64>,
        domain_radius: f64,
    ) -> Self {
        assert_eq!(center.len(), dim, "domain center must have the field dimension");
        Self { name: name.into(), dim, rhs: Arc::new(rhs), jacobian: None, center, domain_radius, hole_radius: 0.0 }
    }

    /// Removes the ball of radius `r` around `center` from the domain.
    pub fn with_hole(mut self, r: f64) -> Self {
        self.hole_radius = r;
        self
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn without_jacobian(mut self) -> Self {
        self.jacobian = None;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_exact_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn eval_into(&self, u: &[f64], out: &mut [f64]) {
        (self.rhs)(u, out)
    }

    pub fn eval(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.rhs)(u, &mut out);
        out
    }

    pub fn in_domain(&self, u: &[f64]) -> bool {
        let d: f64 = u.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        d <= self.domain_radius && (self.hole_radius == 0.0 || d > self.hole_radius) && u.iter().all(|x| x.is_finite())
    }

    /// `F'(u)`: exact when supplied, otherwise central differences.
    pub fn jacobian(&self, u: &[f64]) -> DMatrix<f64> {
        match &self.jacobian {
            Some(j) => j(u),
            None => self.fd_jacobian(u),
        }
    }

    /// Central differences with step `ε^{1/3}(1 + |u|)` per column.
    pub fn fd_jacobian(&self, u: &[f64]) -> DMatrix<f64> {
        let h = f64::EPSILON.cbrt() * (1.0 + crate::linalg::norm2(u));
        self.fd_jacobian_with_step(u, h)
    }

    pub fn fd_jacobian_with_step(&self, u: &[f64], h: f64) -> DMatrix<f64> {
        let n = self.dim;
        let mut jac = DMatrix::zeros(n, n);
        let mut up = u.to_vec();
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        for j in 0..n {
            up[j] = u[j] + h;
            self.eval_into(&up, &mut fp);
            up[j] = u[j] - h;
            self.eval_into(&up, &mut fm);
            up[j] = u[j];
            for i in 0..n {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        jac
    }

    /// Conjugates the field by an orthogonal matrix: `F̃(u) = Q F(Qᵀ u)`.
    pub fn conjugated(&self, q: &DMatrix<f64>) -> Self {
        let inner = self.clone();
        let q1 = q.clone();
        let qt = q.transpose();
        let center = (q * crate::linalg::to_dvector(&self.center)).as_slice().to_vec();
        let rhs = {
            let inner = inner.clone();
            let q1 = q1.clone();
            let qt = qt.clone();
            move |u: &[f64], out: &mut [f64]| {
                let x = &qt * crate::linalg::to_dvector(u);
                let f = crate::linalg::to_dvector(&inner.eval(x.as_slice()));
                out.copy_from_slice((&q1 * f).as_slice());
            }
        };
        let mut c = VectorFieldSpec::new(format!("{} (conjugated)", self.name), self.dim, rhs, center, self.domain_radius)
            .with_hole(self.hole_radius);
        if self.has_exact_jacobian() {
            c = c.with_jacobian(move |u: &[f64]| {
                let x = &qt * crate::linalg::to_dvector(u);
                &q1 * inner.jacobian(x.as_slice()) * &qt
            });
        }
        c
    }
}

/// A chart `Ψ: U ⊂ ℝᵐ → ℝⁿ` of the equilibrium manifold with `Ψ(0) = u_*`.
#[derive(Clone)]
pub struct ManifoldChart {
    pub name: String,
    m: usize,
    n: usize,
    psi: Arc<ChartFn>,
    pub chart_radius: f64,
}

impl fmt::Debug for ManifoldChart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ManifoldChart")
            .field("name", &self.name)
            .field("m", &self.m)
            .field("n", &self.n)
            .field("chart_radius", &self.chart_radius)
            .finish()
    }
}

const CHART_FD_STEP: f64 = 1e-5;

impl ManifoldChart {
    pub fn new(
        name: impl Into<String>,
        m: usize,
        n: usize,
        psi: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        chart_radius: f64,
    ) -> Self {
        Self { name: name.into(), m, n, psi: Arc::new(psi), chart_radius }
    }

    /// Unit circle in the first two coordinates of ℝⁿ based at
    /// `(0, 1, 0, …)`: `Ψ(ζ) = (sin ζ, cos ζ, 0, …)`.
    pub fn unit_circle(n: usize) -> Self {
        assert!(n >= 2);
        Self::new(
            "unit-circle",
            1,
            n,
            move |z: &[f64]| {
                let mut p = vec![0.0; n];
                p[0] = z[0].sin();
                p[1] = z[0].cos();
                p
            },
            std::f64::consts::PI,
        )
    }

    /// Zero-dimensional chart of an isolated equilibrium.
    pub fn point(u_star: Vec<f64>) -> Self {
        let n = u_star.len();
        Self::new("point", 0, n, move |_| u_star.clone(), 0.0)
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn ambient_dim(&self) -> usize {
        self.n
    }

    pub fn eval(&self, zeta: &[f64]) -> Vec<f64> {
        (self.psi)(zeta)
    }

    pub fn base_point(&self) -> Vec<f64> {
        self.eval(&vec![0.0; self.m])
    }

    /// `Ψ'(ζ)` by central differences (n×m).
    pub fn derivative(&self, zeta: &[f64]) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.m);
        let mut z = zeta.to_vec();
        for j in 0..self.m {
            z[j] = zeta[j] + CHART_FD_STEP;
            let p = self.eval(&z);
            z[j] = zeta[j] - CHART_FD_STEP;
            let q = self.eval(&z);
            z[j] = zeta[j];
            for i in 0..self.n {
                d[(i, j)] = (p[i] - q[i]) / (2.0 * CHART_FD_STEP);
            }
        }
        d
    }

    /// Deterministic sample of chart parameters: a tensor grid with
    /// `per_dim` points per coordinate over `[-frac·r, frac·r]`.
    pub fn sample_parameters(&self, per_dim: usize, frac: f64) -> Vec<Vec<f64>> {
        if self.m == 0 {
            return vec![Vec::new()];
        }
        let r = frac * self.chart_radius;
        let axis: Vec<f64> =
            if per_dim <= 1 { vec![0.0] } else { (0..per_dim).map(|i| -r + 2.0 * r * i as f64 / (per_dim - 1) as f64).collect() };
        let mut out = vec![Vec::new()];
        for _ in 0..self.m {
            out = out
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |a| {
                        let mut q = p.clone();
                        q.push(*a);
                        q
                    })
                })
                .collect();
        }
        out
    }

    /// Largest `|F(Ψ(ζ))|` over the given parameters.
    pub fn equilibrium_residual(&self, fs: &VectorFieldSpec, params: &[Vec<f64>]) -> f64 {
        params.iter().map(|z| crate::linalg::norm2(&fs.eval(&self.eval(z)))).fold(0.0, f64::max)
    }

    pub fn conjugated(&self, q: &DMatrix<f64>) -> Self {
        let inner = self.clone();
        let q = q.clone();
        ManifoldChart::new(
            format!("{} (conjugated)", self.name),
            self.m,
            self.n,
            move |z: &[f64]| (&q * crate::linalg::to_dvector(&inner.eval(z))).as_slice().to_vec(),
            self.chart_radius,
        )
    }
}

/// `A₀ = -F'(u_*)`, so the deviation obeys `v̇ + A₀ v = G(v)`.
pub fn linearize(fs: &VectorFieldSpec, u_star: &[f64], eps_eq: f64) -> Result<SquareMatrix, NormalFormError> {
    if u_star.len() != fs.dim() {
        return Err(NormalFormError::DimensionMismatch { expected: fs.dim(), got: u_star.len() });
    }
    let residual = crate::linalg::norm2(&fs.eval(u_star));
    if !(residual <= eps_eq) {
        return Err(NormalFormError::NotAnEquilibrium { residual });
    }
    Ok(SquareMatrix::new(-fs.jacobian(u_star))?)
}

/// `G(v) = F(u_* + v) + A₀ v`.
pub(crate) fn nonlinearity(fs: &VectorFieldSpec, u_star: &[f64], a0: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let u: Vec<f64> = u_star.iter().zip(v).map(|(a, b)| a + b).collect();
    let f = fs.eval(&u);
    let av = a0 * crate::linalg::to_dvector(v);
    f.iter().zip(av.iter()).map(|(a, b)| a + b).collect()
}

/// `G'(v) = F'(u_* + v) + A₀`.
pub(crate) fn nonlinearity_jacobian(fs: &VectorFieldSpec, u_star: &[f64], a0: &DMatrix<f64>, v: &[f64]) -> DMatrix<f64> {
    let u: Vec<f64> = u_star.iter().zip(v).map(|(a, b)| a + b).collect();
    fs.jacobian(&u) + a0
}
