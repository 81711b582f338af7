//! Self-consistency checks of the spectral split, the graph map and the
//! normal-form coordinates for a given problem.

use nalgebra::{DMatrix, DVector};

use super::{
    from_normal_form, linearize, normal_form_rhs, solve_graph_map, to_normal_form, ManifoldChart, NormalCoords, NormalFormError,
    Tolerances, VectorFieldSpec,
};
use crate::linalg::{norm2, orthonormal_columns};
use crate::spectral::{eigen_decompose, spectral_projections};

/// Number of center points at which `T(x, 0)` and `R(x, 0)` are evaluated.
pub const ON_GRAPH_SAMPLES: usize = 100;
const ROUNDTRIP_SAMPLES: usize = 50;

/// Worst violations found by [`structural_invariants`].
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralReport {
    pub name: String,
    pub dims: (usize, usize, usize),
    pub rho0: f64,
    /// `max ‖P² − P‖` over the three projections.
    pub idempotence: f64,
    /// `‖P^c + P^s + P^u − I‖`.
    pub completeness: f64,
    /// `max ‖A₀P − PA₀‖ / max(‖A₀‖, 1)`.
    pub commutation: f64,
    /// `max |v − x − φ(x) − y − z|` over deviations near `u_*`.
    pub roundtrip: f64,
    /// `max (|T| + |R_s| + |R_u|)` on `{y = 0, z = 0}`.
    pub rhs_on_graph: f64,
    /// `max |P^su v − φ(P^c v)|` over chart points `v = Ψ(ζ) − u_*` with
    /// `|P^c v| ≤ ρ₀` and `|v| ≤ 2ρ₀`.
    pub chart_on_graph: f64,
    pub chart_points: usize,
}

impl StructuralReport {
    pub fn failures(&self, tol: &Tolerances) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |name: &str, value: f64, bound: f64| {
            if !(value <= bound) {
                out.push(format!("{name} = {value:.3e} exceeds {bound:.1e}"));
            }
        };
        check("projection idempotence", self.idempotence, tol.eps_proj);
        check("projection completeness", self.completeness, tol.eps_proj);
        check("projection commutation", self.commutation, tol.eps_proj);
        check("normal-form roundtrip", self.roundtrip, 1e-10);
        check("T, R on {y = 0}", self.rhs_on_graph, tol.eps_eq);
        check("chart on graph", self.chart_on_graph, tol.eps_graph);
        out
    }
}

/// Deterministic points with coordinates in `[−1, 1]` (additive recurrence
/// with square roots of primes).
fn quasi_random(count: usize, dim: usize) -> Vec<Vec<f64>> {
    const ALPHAS: [f64; 8] = [
        std::f64::consts::SQRT_2,
        1.732_050_807_568_877_2,
        2.236_067_977_499_79,
        2.645_751_311_064_590_7,
        3.316_624_790_355_4,
        3.605_551_275_463_989,
        4.123_105_625_617_661,
        4.358_898_943_540_674,
    ];
    (1..=count).map(|i| (0..dim).map(|d| 2.0 * (i as f64 * ALPHAS[d % 8]).fract() - 1.0).collect()).collect()
}

pub fn structural_invariants(
    fs: &VectorFieldSpec,
    chart: &ManifoldChart,
    tol: &Tolerances,
    rho0: f64,
) -> Result<StructuralReport, NormalFormError> {
    let u_star = chart.base_point();
    let a0 = linearize(fs, &u_star, tol.eps_eq)?;
    let report = eigen_decompose(&a0, tol.tol_zero, tol.gap)?;
    let split = spectral_projections(&a0, &report)?;
    let n = split.n();
    let a = a0.as_matrix();
    let id = DMatrix::<f64>::identity(n, n);
    let projections = [&split.pc, &split.ps, &split.pu];
    let idempotence = projections.iter().map(|p| (*p * *p - *p).amax()).fold(0.0, f64::max);
    let completeness = (&split.pc + &split.ps + &split.pu - &id).amax();
    let scale = a.amax().max(1.0);
    let commutation = projections.iter().map(|p| (a * *p - *p * a).amax() / scale).fold(0.0, f64::max);

    let gm = solve_graph_map(fs, &u_star, &split, rho0, tol)?;
    let r = gm.rho0;
    let center = orthonormal_columns(&split.basis_c, 1e-10);
    let m_c = center.ncols();

    let mut rhs_on_graph: f64 = 0.0;
    if m_c > 0 {
        for p in quasi_random(ON_GRAPH_SAMPLES, m_c) {
            let c = DVector::from_vec(p);
            // keep inside the ball of radius 0.9·rho0
            let c = if c.norm() > 1.0 { c.normalize() } else { c };
            let x = (&center * c * (0.9 * r)).as_slice().to_vec();
            let coords = NormalCoords { x, y: vec![0.0; n], z: vec![0.0; n] };
            rhs_on_graph = rhs_on_graph.max(normal_form_rhs(&coords, &gm)?.norm());
        }
    } else {
        let coords = NormalCoords { x: vec![0.0; n], y: vec![0.0; n], z: vec![0.0; n] };
        rhs_on_graph = normal_form_rhs(&coords, &gm)?.norm();
    }

    let mut roundtrip: f64 = 0.0;
    for p in quasi_random(ROUNDTRIP_SAMPLES, n) {
        let v: Vec<f64> = p.iter().map(|x| 0.5 * r * x / (n as f64).sqrt()).collect();
        let pc_v = &split.pc * DVector::from_column_slice(&v);
        if pc_v.norm() > r {
            continue;
        }
        let back = from_normal_form(&to_normal_form(&v, &gm)?, &gm)?;
        roundtrip = roundtrip.max(back.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }

    let mut chart_on_graph: f64 = 0.0;
    let mut chart_points = 0;
    // the graph describes the equilibria only near u_*; far chart points can
    // share a center coordinate with a near one
    let frac = (2.0 * r / chart.chart_radius).min(0.5);
    for z in chart.sample_parameters(21, frac) {
        let v = DVector::from_vec(chart.eval(&z)) - DVector::from_column_slice(&u_star);
        let x = &split.pc * &v;
        if x.norm() > r || v.norm() > 2.0 * r {
            continue;
        }
        let phi = DVector::from_vec(gm.phi(x.as_slice())?);
        chart_on_graph = chart_on_graph.max(norm2((split.p_su() * &v - phi).as_slice()));
        chart_points += 1;
    }

    Ok(StructuralReport {
        name: fs.name.clone(),
        dims: split.dims,
        rho0: r,
        idempotence,
        completeness,
        commutation,
        roundtrip,
        rhs_on_graph,
        chart_on_graph,
        chart_points,
    })
}
