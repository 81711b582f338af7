use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};

use super::{nonlinearity, nonlinearity_jacobian, NormalFormError, Tolerances, VectorFieldSpec};
use crate::linalg::{norm2, to_dvector};
use crate::spectral::{SpectralSplit, SquareMatrix};

const NEWTON_MAX_ITER: usize = 50;
const MAX_HALVINGS: usize = 20;
const DAMPING_STEPS: usize = 30;
/// Fractions of `rho0` at which `|φ'| ≤ 1` is sampled.
const MESH_RADII: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// One solved point of the graph map.
#[derive(Debug, Clone)]
pub struct GraphPoint {
    /// `φ(x)` in ambient coordinates; lies in `range(P^s) ⊕ range(P^u)`.
    pub phi: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// The map `φ` whose graph over the center subspace is the equilibrium set,
/// defined by `A_su φ(x) = P^su G(x + φ(x))`.
///
/// Points are given in ambient coordinates; only `P^c x` matters.
#[derive(Debug, Clone)]
pub struct GraphMap {
    fs: VectorFieldSpec,
    u_star: Vec<f64>,
    a0: DMatrix<f64>,
    split: SpectralSplit,
    pub rho0: f64,
    eps_newton: f64,
    cache: Arc<RwLock<HashMap<Vec<u64>, GraphPoint>>>,
}

fn key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

impl GraphMap {
    pub fn split(&self) -> &SpectralSplit {
        &self.split
    }

    pub fn field(&self) -> &VectorFieldSpec {
        &self.fs
    }

    pub fn u_star(&self) -> &[f64] {
        &self.u_star
    }

    pub fn a0(&self) -> &DMatrix<f64> {
        &self.a0
    }

    /// `G(v) = F(u_* + v) + A₀ v`.
    pub fn g(&self, v: &[f64]) -> Vec<f64> {
        nonlinearity(&self.fs, &self.u_star, &self.a0, v)
    }

    fn center_part(&self, x: &[f64]) -> DVector<f64> {
        &self.split.pc * to_dvector(x)
    }

    /// Solves for `φ(P^c x)`; errors if `|P^c x| > rho0`.
    pub fn eval(&self, x: &[f64]) -> Result<GraphPoint, NormalFormError> {
        let xc = self.center_part(x);
        let norm = xc.norm();
        if norm > self.rho0 * (1.0 + 1e-12) {
            return Err(NormalFormError::OutOfChart { norm, rho0: self.rho0 });
        }
        self.solve(xc.as_slice())
    }

    pub fn phi(&self, x: &[f64]) -> Result<Vec<f64>, NormalFormError> {
        self.eval(x).map(|p| p.phi)
    }

    pub fn phi_s(&self, x: &[f64]) -> Result<Vec<f64>, NormalFormError> {
        let p = self.phi(x)?;
        Ok((&self.split.ps * to_dvector(&p)).as_slice().to_vec())
    }

    pub fn phi_u(&self, x: &[f64]) -> Result<Vec<f64>, NormalFormError> {
        let p = self.phi(x)?;
        Ok((&self.split.pu * to_dvector(&p)).as_slice().to_vec())
    }

    /// Newton solve without the radius check; `xc` must lie in `range(P^c)`.
    fn solve(&self, xc: &[f64]) -> Result<GraphPoint, NormalFormError> {
        let k = key(xc);
        if let Some(p) = self.cache.read().expect("graph cache poisoned").get(&k) {
            return Ok(p.clone());
        }
        let p = self.newton(xc)?;
        self.cache.write().expect("graph cache poisoned").insert(k, p.clone());
        Ok(p)
    }

    fn residual(
        &self,
        xc: &DVector<f64>,
        basis: &DMatrix<f64>,
        coords: &DMatrix<f64>,
        a_su: &DMatrix<f64>,
        c: &DVector<f64>,
    ) -> DVector<f64> {
        let v = xc + basis * c;
        let g = to_dvector(&self.g(v.as_slice()));
        a_su * c - coords * g
    }

    fn newton(&self, xc: &[f64]) -> Result<GraphPoint, NormalFormError> {
        let n = self.split.n();
        let basis = self.split.basis_su();
        let k = basis.ncols();
        if k == 0 {
            return Ok(GraphPoint { phi: vec![0.0; n], residual: 0.0, iterations: 0 });
        }
        let coords = self.split.coords_su();
        let a_su = self.split.a_su();
        let xv = to_dvector(xc);
        let mut c = DVector::zeros(k);
        let mut r = self.residual(&xv, &basis, &coords, &a_su, &c);
        let mut rn = r.norm();
        let mut iterations = 0;
        while rn > self.eps_newton {
            if iterations >= NEWTON_MAX_ITER || !rn.is_finite() {
                return Err(NormalFormError::NewtonDiverged { x_norm: xv.norm(), residual: rn });
            }
            iterations += 1;
            let v = &xv + &basis * &c;
            let gp = nonlinearity_jacobian(&self.fs, &self.u_star, &self.a0, v.as_slice());
            let jac = &a_su - &coords * gp * &basis;
            let step = jac.lu().solve(&r).ok_or(NormalFormError::NewtonDiverged { x_norm: xv.norm(), residual: rn })?;
            // halve the step until the residual decreases
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..DAMPING_STEPS {
                let trial = &c - &step * t;
                let rt = self.residual(&xv, &basis, &coords, &a_su, &trial);
                let rtn = rt.norm();
                if rtn < rn || rtn <= self.eps_newton {
                    c = trial;
                    r = rt;
                    rn = rtn;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                return Err(NormalFormError::NewtonDiverged { x_norm: xv.norm(), residual: rn });
            }
        }
        Ok(GraphPoint { phi: (&basis * c).as_slice().to_vec(), residual: rn, iterations })
    }

    /// `φ'(x)` as an n×n matrix acting on ambient vectors (it annihilates
    /// the stable and unstable parts), from the implicit-function formula
    /// `φ' = V_su J⁻¹ W_su G'(x + φ) P^c`.
    pub fn derivative(&self, x: &[f64]) -> Result<DMatrix<f64>, NormalFormError> {
        let n = self.split.n();
        let basis = self.split.basis_su();
        if basis.ncols() == 0 {
            return Ok(DMatrix::zeros(n, n));
        }
        let xc = self.center_part(x);
        let p = self.eval(x)?;
        let v = &xc + to_dvector(&p.phi);
        let gp = nonlinearity_jacobian(&self.fs, &self.u_star, &self.a0, v.as_slice());
        let coords = self.split.coords_su();
        let jac = self.split.a_su() - &coords * &gp * &basis;
        let rhs = &coords * &gp * &self.split.pc;
        let sol = jac.lu().solve(&rhs).ok_or(NormalFormError::NewtonDiverged { x_norm: xc.norm(), residual: p.residual })?;
        Ok(basis * sol)
    }

    /// Operator norm of `φ'(x)` restricted to the center subspace.
    pub fn derivative_norm(&self, x: &[f64]) -> Result<f64, NormalFormError> {
        let d = self.derivative(x)?;
        let restricted = d * &self.split.basis_c;
        if restricted.ncols() == 0 {
            return Ok(0.0);
        }
        Ok(restricted.singular_values().iter().cloned().fold(0.0, f64::max))
    }

    /// Center vectors of norm `r` used to probe the derivative bound.
    fn mesh(&self, radius: f64) -> Vec<Vec<f64>> {
        let bc = &self.split.basis_c;
        let mut dirs: Vec<DVector<f64>> = Vec::new();
        for j in 0..bc.ncols() {
            let e = bc.column(j).into_owned();
            dirs.push(e.clone());
            dirs.push(-e);
        }
        for i in 0..bc.ncols() {
            for j in (i + 1)..bc.ncols() {
                let s = (bc.column(i) + bc.column(j)).normalize();
                let d = (bc.column(i) - bc.column(j)).normalize();
                dirs.extend([s.clone(), -s, d.clone(), -d]);
            }
        }
        MESH_RADII.iter().flat_map(|f| dirs.iter().map(move |d| (d * (f * radius)).as_slice().to_vec())).collect()
    }

    pub fn cache_len(&self) -> usize {
        self.cache.read().expect("graph cache poisoned").len()
    }
}

/// Builds the graph map around `u_star`, shrinking `rho0` by halving until
/// `|φ'| ≤ 1` and every Newton solve succeeds on a sampled mesh.
pub fn solve_graph_map(
    fs: &VectorFieldSpec,
    u_star: &[f64],
    split: &SpectralSplit,
    rho0: f64,
    tol: &Tolerances,
) -> Result<GraphMap, NormalFormError> {
    let a0: SquareMatrix = super::linearize(fs, u_star, tol.eps_eq)?;
    if a0.dim() != split.n() {
        return Err(NormalFormError::DimensionMismatch { expected: split.n(), got: a0.dim() });
    }
    let mut gm = GraphMap {
        fs: fs.clone(),
        u_star: u_star.to_vec(),
        a0: a0.into_inner(),
        split: split.clone(),
        rho0,
        eps_newton: tol.eps_newton,
        cache: Arc::new(RwLock::new(HashMap::new())),
    };
    gm.solve(&vec![0.0; split.n()])?;
    if split.dims.0 == 0 {
        gm.rho0 = 0.0;
        return Ok(gm);
    }
    let mut last_err = NormalFormError::RadiusTooLarge { rho0 };
    for _ in 0..=MAX_HALVINGS {
        match probe(&gm) {
            Ok(()) => return Ok(gm),
            Err(e) => last_err = e,
        }
        gm.rho0 *= 0.5;
        gm.cache.write().expect("graph cache poisoned").clear();
    }
    Err(match last_err {
        NormalFormError::NewtonDiverged { .. } => last_err,
        _ => NormalFormError::RadiusTooLarge { rho0 },
    })
}

fn probe(gm: &GraphMap) -> Result<(), NormalFormError> {
    for x in gm.mesh(gm.rho0) {
        let d = gm.derivative_norm(&x)?;
        if !(d <= 1.0) {
            return Err(NormalFormError::RadiusTooLarge { rho0: gm.rho0 });
        }
    }
    Ok(())
}

/// Normal-form coordinates in ambient form: `x ∈ range(P^c)`,
/// `y ∈ range(P^s)`, `z ∈ range(P^u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalCoords {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

/// `x = P^c v`, `y = P^s v − φ_s(x)`, `z = P^u v − φ_u(x)` for a deviation
/// `v = u − u_*`.
pub fn to_normal_form(v: &[f64], gm: &GraphMap) -> Result<NormalCoords, NormalFormError> {
    let s = gm.split();
    if v.len() != s.n() {
        return Err(NormalFormError::DimensionMismatch { expected: s.n(), got: v.len() });
    }
    let vv = to_dvector(v);
    let x = &s.pc * &vv;
    let phi = to_dvector(&gm.phi(x.as_slice())?);
    let y = &s.ps * (&vv - &phi);
    let z = &s.pu * (&vv - &phi);
    Ok(NormalCoords { x: x.as_slice().to_vec(), y: y.as_slice().to_vec(), z: z.as_slice().to_vec() })
}

/// Inverse of [`to_normal_form`]: `v = x + φ(x) + y + z`.
pub fn from_normal_form(c: &NormalCoords, gm: &GraphMap) -> Result<Vec<f64>, NormalFormError> {
    let phi = gm.phi(&c.x)?;
    Ok((0..phi.len()).map(|i| c.x[i] + phi[i] + c.y[i] + c.z[i]).collect())
}

/// Right-hand side of the normal-form system
/// `ẋ = T`, `ẏ + A₀ y = R_s`, `ż + A₀ z = R_u`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalFormRhs {
    pub t: Vec<f64>,
    pub r_s: Vec<f64>,
    pub r_u: Vec<f64>,
}

impl NormalFormRhs {
    pub fn norm(&self) -> f64 {
        norm2(&self.t) + norm2(&self.r_s) + norm2(&self.r_u)
    }
}

/// With `ΔG = G(x + φ(x) + y + z) − G(x + φ(x))`:
/// `T = P^c ΔG`, `R_s = P^s ΔG − P^s φ'(x) T`, `R_u = P^u ΔG − P^u φ'(x) T`.
pub fn normal_form_rhs(c: &NormalCoords, gm: &GraphMap) -> Result<NormalFormRhs, NormalFormError> {
    let s = gm.split();
    let phi = gm.phi(&c.x)?;
    let base: Vec<f64> = (0..phi.len()).map(|i| c.x[i] + phi[i]).collect();
    let full: Vec<f64> = (0..phi.len()).map(|i| base[i] + c.y[i] + c.z[i]).collect();
    let dg = to_dvector(&gm.g(&full)) - to_dvector(&gm.g(&base));
    let t = &s.pc * &dg;
    let dphi_t = gm.derivative(&c.x)? * &t;
    let r_s = &s.ps * (&dg - &dphi_t);
    let r_u = &s.pu * (&dg - &dphi_t);
    Ok(NormalFormRhs { t: t.as_slice().to_vec(), r_s: r_s.as_slice().to_vec(), r_u: r_u.as_slice().to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{eigen_decompose, spectral_projections};

    /// Equilibria on the parabola y = x²/2, attracted along the oblique
    /// direction (1, 4).
    fn parabola_field() -> VectorFieldSpec {
        VectorFieldSpec::new(
            "parabola",
            2,
            |u, out| {
                let e = u[1] - 0.5 * u[0] * u[0];
                out[0] = -0.5 * e;
                out[1] = -2.0 * e;
            },
            vec![0.0; 2],
            10.0,
        )
    }

    fn graph_for(fs: &VectorFieldSpec, rho0: f64) -> GraphMap {
        let tol = Tolerances::default();
        let a0 = super::super::linearize(fs, &[0.0, 0.0], tol.eps_eq).unwrap();
        let rep = eigen_decompose(&a0, tol.tol_zero, tol.gap).unwrap();
        let split = spectral_projections(&a0, &rep).unwrap();
        solve_graph_map(fs, &[0.0, 0.0], &split, rho0, &tol).unwrap()
    }

    #[test]
    fn phi_vanishes_at_origin() {
        let gm = graph_for(&parabola_field(), 0.5);
        let p = gm.eval(&[0.0, 0.0]).unwrap();
        assert!(norm2(&p.phi) < 1e-14);
        assert!(gm.derivative_norm(&[0.0, 0.0]).unwrap() < 1e-8);
    }

    #[test]
    fn graph_reproduces_the_parabola() {
        // A₀ = [[0, 0.5], [0, 2]]: kernel (1, 0), stable direction (1, 4).
        // A point (s, s²/2) splits as x = (s - s²/8) e1 and φ = (s²/8)(1, 4).
        let gm = graph_for(&parabola_field(), 0.4);
        for s in [-0.3f64, -0.1, 0.05, 0.2, 0.35] {
            let x = s - s * s / 8.0;
            if x.abs() > gm.rho0 {
                continue;
            }
            let phi = gm.phi(&[x, 0.0]).unwrap();
            let b = s * s / 8.0;
            assert!((phi[0] - b).abs() < 1e-10 && (phi[1] - 4.0 * b).abs() < 1e-10, "{phi:?}");
        }
    }

    #[test]
    fn radius_is_shrunk_until_derivative_bound_holds() {
        let gm = graph_for(&parabola_field(), 8.0);
        assert!(gm.rho0 < 8.0);
        for x in gm.mesh(gm.rho0) {
            assert!(gm.derivative_norm(&x).unwrap() <= 1.0);
        }
    }

    #[test]
    fn out_of_chart_is_reported() {
        let gm = graph_for(&parabola_field(), 0.1);
        assert!(matches!(gm.eval(&[1.0, 0.0]), Err(NormalFormError::OutOfChart { .. })));
        // the stable component of the argument is ignored
        assert!(gm.eval(&[1.05, 4.0]).is_ok());
    }

    #[test]
    fn roundtrip_and_equilibrium_rhs() {
        let gm = graph_for(&parabola_field(), 0.4);
        let v = [0.1, -0.03];
        let c = to_normal_form(&v, &gm).unwrap();
        let back = from_normal_form(&c, &gm).unwrap();
        assert!((back[0] - v[0]).abs() < 1e-12 && (back[1] - v[1]).abs() < 1e-12);
        let on_graph = NormalCoords { x: c.x.clone(), y: vec![0.0; 2], z: vec![0.0; 2] };
        assert!(normal_form_rhs(&on_graph, &gm).unwrap().norm() < 1e-12);
        assert!(gm.cache_len() > 0);
    }
}
