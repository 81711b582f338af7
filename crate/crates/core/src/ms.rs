//! Linearized Mullins-Sekerka operator around a circle in the plane.
//!
//! For a circle `Σ` of radius `R` inside a disc of radius `R_out`, the
//! linearization acts on the circular harmonic `cos kθ` by the product of two
//! scalars: the curvature part `A_Σ`, which gives `(k² − 1)/R²`, and the
//! jump of the normal derivative of the harmonic extension across `Σ`
//! (regular at the center, zero flux at `R_out`). Both extensions are
//! computed by second-order finite differences on the radial equation
//! `v'' + v'/r − k²v/r² = 0`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::{orthonormal_columns, principal_cosines, solve_tridiagonal};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MsError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("mode {k}: doubling the radial grid changes the jump by {rel_change:.2e} (relative)")]
    GridTooCoarse { k: usize, rel_change: f64 },
    #[error("chart radicand is nonpositive at θ = {theta:.4}")]
    InvalidRadius { theta: f64 },
    #[error("singular radial system")]
    Singular,
}

/// Circle-in-disc geometry and discretization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsConfig {
    pub r: f64,
    pub r_out: f64,
    pub k_max: usize,
    /// Radial nodes per phase.
    pub radial_grid: usize,
}

impl Default for MsConfig {
    fn default() -> Self {
        Self { r: 1.0, r_out: 20.0, k_max: 6, radial_grid: 2000 }
    }
}

/// Relative change allowed when the radial grid is doubled.
pub const DOUBLING_TOL: f64 = 1e-3;

impl MsConfig {
    pub fn validate(&self) -> Result<(), MsError> {
        if !(self.r > 0.0 && self.r_out > self.r && self.r_out.is_finite()) {
            return Err(MsError::InvalidConfig(format!("need 0 < R < R_out (got R = {}, R_out = {})", self.r, self.r_out)));
        }
        if self.k_max < 2 {
            return Err(MsError::InvalidConfig(format!("k_max = {} must be at least 2", self.k_max)));
        }
        if self.radial_grid < 8 {
            return Err(MsError::InvalidConfig(format!("radial grid of {} nodes is too small", self.radial_grid)));
        }
        Ok(())
    }
}

/// Eigenvalue of `A_Σ` on the `k`-th circular harmonic: `(k² − 1)/R²`.
pub fn a_sigma_mode(k: usize, r: f64) -> f64 {
    let k = k as f64;
    (k * k - 1.0) / (r * r)
}

/// `v'(R⁻)` for the extension into the disc with `v(R) = 1`.
fn inner_derivative(k: usize, r: f64, m: usize) -> Result<f64, MsError> {
    // nodes r_i = i·h, i = 0..=m; conservative form (r v')' = k² v / r
    let h = r / m as f64;
    let kk = (k * k) as f64;
    let n = m; // unknowns v_0..v_{m-1}; v_m = 1
    let mut sub = vec![0.0; n - 1];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n - 1];
    let mut rhs = vec![0.0; n];
    if k == 0 {
        // zero flux through r = h/2 by symmetry
        diag[0] = -1.0;
        sup[0] = 1.0;
    } else {
        diag[0] = 1.0;
    }
    for i in 1..n {
        let ri = i as f64 * h;
        let rp = ri + 0.5 * h;
        let rm = ri - 0.5 * h;
        sub[i - 1] = rm;
        diag[i] = -(rp + rm) - kk * h * h / ri;
        if i + 1 < n {
            sup[i] = rp;
        } else {
            rhs[i] = -rp;
        }
    }
    let v = solve_tridiagonal(&sub, &diag, &sup, &rhs).ok_or(MsError::Singular)?;
    Ok((3.0 - 4.0 * v[n - 1] + v[n - 2]) / (2.0 * h))
}

/// `v'(R⁺)` for the extension into the annulus with `v(R) = 1` and
/// `v'(R_out) = 0`, in the variable `x = ln(r/R)` where the equation becomes
/// `v_xx = k²v`.
fn outer_derivative(k: usize, r: f64, r_out: f64, m: usize) -> Result<f64, MsError> {
    let x_end = (r_out / r).ln();
    let h = x_end / m as f64;
    let c = 2.0 + (k * k) as f64 * h * h;
    // unknowns v_1..v_m; v_0 = 1
    let n = m;
    let mut sub = vec![1.0; n - 1];
    let mut diag = vec![-c; n];
    let sup = vec![1.0; n - 1];
    let mut rhs = vec![0.0; n];
    rhs[0] = -1.0;
    // one-sided Neumann (3v_m − 4v_{m−1} + v_{m−2}) = 0 with v_{m−2}
    // eliminated through the interior equation at m − 1
    sub[n - 2] = c - 4.0;
    diag[n - 1] = 2.0;
    let v = solve_tridiagonal(&sub, &diag, &sup, &rhs).ok_or(MsError::Singular)?;
    let dvdx = (-3.0 + 4.0 * v[0] - v[1]) / (2.0 * h);
    Ok(dvdx / r)
}

fn jump_at(k: usize, cfg: &MsConfig, m: usize) -> Result<f64, MsError> {
    Ok(outer_derivative(k, cfg.r, cfg.r_out, m)? - inner_derivative(k, cfg.r, m)?)
}

/// Jump `∂_ν v_outer − ∂_ν v_inner` across `Σ` of the harmonic extension of
/// `cos kθ`, with `ν` the outer normal of the disc. Fails when doubling the
/// radial grid changes the value by more than [`DOUBLING_TOL`].
pub fn dtn_jump_mode(k: usize, cfg: &MsConfig) -> Result<f64, MsError> {
    cfg.validate()?;
    let coarse = jump_at(k, cfg, cfg.radial_grid)?;
    let fine = jump_at(k, cfg, 2 * cfg.radial_grid)?;
    let rel_change = (fine - coarse).abs() / fine.abs().max(1.0 / cfg.r);
    if rel_change > DOUBLING_TOL {
        return Err(MsError::GridTooCoarse { k, rel_change });
    }
    Ok(fine)
}

/// `λ_k = −[∂_ν v]·(k² − 1)/R²`.
pub fn l_mode_eigenvalue(k: usize, cfg: &MsConfig) -> Result<f64, MsError> {
    Ok(-dtn_jump_mode(k, cfg)? * a_sigma_mode(k, cfg.r))
}

/// Whole-plane value `2k(k² − 1)/R³`.
pub fn whole_plane_eigenvalue(k: usize, r: f64) -> f64 {
    let kf = k as f64;
    2.0 * kf * (kf * kf - 1.0) / r.powi(3)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeEigen {
    pub k: usize,
    pub jump: f64,
    pub a_sigma: f64,
    pub lambda: f64,
    pub reference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeEigenReport {
    pub modes: Vec<ModeEigen>,
    /// Zero modes counted with multiplicity (two per `k ≥ 1`).
    pub kernel_dim: usize,
    pub tol_zero: f64,
}

impl ModeEigenReport {
    pub fn zero_modes(&self) -> Vec<usize> {
        self.modes.iter().filter(|m| m.lambda.abs() <= self.tol_zero).map(|m| m.k).collect()
    }

    pub fn nondecreasing(&self) -> bool {
        self.modes.windows(2).filter(|w| w[0].k >= 1).all(|w| w[1].lambda >= w[0].lambda)
    }
}

pub fn mode_eigenvalues(cfg: &MsConfig, tol_zero: f64) -> Result<ModeEigenReport, MsError> {
    cfg.validate()?;
    let modes = (0..=cfg.k_max)
        .map(|k| {
            let jump = dtn_jump_mode(k, cfg)?;
            let a_sigma = a_sigma_mode(k, cfg.r);
            Ok(ModeEigen { k, jump, a_sigma, lambda: -jump * a_sigma, reference: whole_plane_eigenvalue(k, cfg.r) })
        })
        .collect::<Result<Vec<_>, MsError>>()?;
    let kernel_dim = modes.iter().filter(|m| m.lambda.abs() <= tol_zero).map(|m| if m.k == 0 { 1 } else { 2 }).sum();
    Ok(ModeEigenReport { modes, kernel_dim, tol_zero })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolRow {
    pub xi: f64,
    pub jump: f64,
    pub reference: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatSymbolReport {
    pub step: f64,
    pub rows: Vec<SymbolRow>,
    pub max_rel_err: f64,
}

/// Derivative at `y = 0` of the solution of `−w'' + ξ²w = 0` on `(0, H)`
/// with `w(0) = ξ²`, `w(H) = 0`; `dir = −1` solves on `(−H, 0)` instead.
fn strip_derivative(xi: f64, height: f64, step: f64, dir: f64) -> Result<f64, MsError> {
    let m = (height / step).round().max(4.0) as usize;
    let h = height / m as f64;
    let n = m - 1; // unknowns at y = j·h·dir, j = 1..m−1
    let c = 2.0 + xi * xi * h * h;
    let sub = vec![1.0; n - 1];
    let diag = vec![-c; n];
    let sup = vec![1.0; n - 1];
    let mut rhs = vec![0.0; n];
    rhs[0] = -xi * xi;
    let w = solve_tridiagonal(&sub, &diag, &sup, &rhs).ok_or(MsError::Singular)?;
    Ok(dir * (-3.0 * xi * xi + 4.0 * w[0] - w[1]) / (2.0 * h))
}

/// Two-phase flat problem per frequency: the jump `[∂_y w]` at `y = 0`
/// against `−2|ξ|³`. `strip_height = None` takes `H = 12/min|ξ|`.
pub fn flat_symbol_check(xi_list: &[f64], strip_height: Option<f64>, step: f64) -> Result<FlatSymbolReport, MsError> {
    if xi_list.is_empty() || xi_list.iter().any(|x| !(x.abs() > 0.0) || !x.is_finite()) {
        return Err(MsError::InvalidConfig("frequencies must be nonzero and finite".into()));
    }
    let xi_min = xi_list.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
    let height = strip_height.unwrap_or(12.0 / xi_min);
    if !(step > 0.0 && height > 4.0 * step) {
        return Err(MsError::InvalidConfig(format!("step {step} too large for strip height {height}")));
    }
    let rows = xi_list
        .iter()
        .map(|&xi| {
            let xi = xi.abs();
            let upper = strip_derivative(xi, height, step, 1.0)?;
            let lower = strip_derivative(xi, height, step, -1.0)?;
            let jump = upper - lower;
            let reference = -2.0 * xi.powi(3);
            Ok(SymbolRow { xi, jump, reference, rel_err: ((jump - reference) / reference).abs() })
        })
        .collect::<Result<Vec<_>, MsError>>()?;
    let max_rel_err = rows.iter().fold(0.0f64, |m, r| m.max(r.rel_err));
    Ok(FlatSymbolReport { step, rows, max_rel_err })
}

/// Runs [`flat_symbol_check`] on successively halved steps and returns the
/// reports with the observed order `log₂(err_h / err_{h/2})` between
/// consecutive levels.
pub fn flat_symbol_ladder(
    xi_list: &[f64],
    strip_height: Option<f64>,
    coarsest: f64,
    levels: usize,
) -> Result<(Vec<FlatSymbolReport>, Vec<f64>), MsError> {
    let reports = (0..levels)
        .map(|l| flat_symbol_check(xi_list, strip_height, coarsest / 2f64.powi(l as i32)))
        .collect::<Result<Vec<_>, MsError>>()?;
    let orders = reports.windows(2).map(|w| (w[0].max_rel_err / w[1].max_rel_err).log2()).collect();
    Ok((reports, orders))
}

/// Least-squares slope of `ln|jump|` against `ln ξ`.
pub fn symbol_scaling_slope(report: &FlatSymbolReport) -> f64 {
    let x: Vec<f64> = report.rows.iter().map(|r| r.xi.ln()).collect();
    let y: Vec<f64> = report.rows.iter().map(|r| r.jump.abs().ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Uniform angles `θ_i = 2πi/count`.
pub fn circle_mesh(count: usize) -> Vec<f64> {
    (0..count).map(|i| 2.0 * std::f64::consts::PI * i as f64 / count as f64).collect()
}

/// Normal distance from `Σ` to the circle of radius `R + z₀` centered at
/// `(z₁, z₂)`:
/// `ρ(z) = Σ z_j Y_j − R + √((Σ z_j Y_j)² + (R + z₀)² − Σ z_j²)` with
/// `Y_j = x_j/R` on `Σ` and sums over `j ≥ 1`.
pub fn sphere_chart(z: &[f64; 3], r: f64, mesh: &[f64]) -> Result<Vec<f64>, MsError> {
    let zz = z[1] * z[1] + z[2] * z[2];
    mesh.iter()
        .map(|&theta| {
            let p = z[1] * theta.cos() + z[2] * theta.sin();
            let radicand = p * p + (r + z[0]).powi(2) - zz;
            if !(radicand > 0.0) {
                return Err(MsError::InvalidRadius { theta });
            }
            Ok(p - r + radicand.sqrt())
        })
        .collect()
}

/// Central-difference derivative of the chart at `z = 0` in direction `dir`.
pub fn sphere_chart_derivative(dir: &[f64; 3], r: f64, mesh: &[f64]) -> Result<Vec<f64>, MsError> {
    let eps = 1e-6 * r;
    let plus = sphere_chart(&[eps * dir[0], eps * dir[1], eps * dir[2]], r, mesh)?;
    let minus = sphere_chart(&[-eps * dir[0], -eps * dir[1], -eps * dir[2]], r, mesh)?;
    Ok(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * eps)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsTangentCheck {
    pub equal: bool,
    pub chart_dim: usize,
    pub kernel_dim: usize,
    /// Principal angles between the two spans (over the common dimension).
    pub angles: Vec<f64>,
}

/// Compares the span of the chart derivatives `{Y₀, Y₁, Y₂}` (plus
/// `cos kθ` for every `k` in `extra_harmonics`) with the span of the modes
/// whose eigenvalue is numerically zero, sampled on a uniform mesh.
pub fn ms_tangent_kernel_check(
    cfg: &MsConfig,
    extra_harmonics: &[usize],
    tol_zero: f64,
    angle_tol: f64,
) -> Result<MsTangentCheck, MsError> {
    let report = mode_eigenvalues(cfg, tol_zero)?;
    let mesh = circle_mesh(8 * (cfg.k_max + extra_harmonics.iter().copied().max().unwrap_or(0)) + 16);
    let mut chart_cols: Vec<Vec<f64>> = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        .iter()
        .map(|d| sphere_chart_derivative(d, cfg.r, &mesh))
        .collect::<Result<_, _>>()?;
    for &k in extra_harmonics {
        chart_cols.push(mesh.iter().map(|t| (k as f64 * t).cos()).collect());
    }
    let mut kernel_cols = Vec::new();
    for k in report.zero_modes() {
        if k == 0 {
            kernel_cols.push(vec![1.0; mesh.len()]);
        } else {
            kernel_cols.push(mesh.iter().map(|t| (k as f64 * t).cos()).collect());
            kernel_cols.push(mesh.iter().map(|t| (k as f64 * t).sin()).collect());
        }
    }
    let to_matrix = |cols: &[Vec<f64>]| DMatrix::from_fn(mesh.len(), cols.len(), |i, j| cols[j][i]);
    let a = orthonormal_columns(&to_matrix(&chart_cols), 1e-8);
    let b = orthonormal_columns(&to_matrix(&kernel_cols), 1e-8);
    let angles: Vec<f64> = principal_cosines(&a, &b).iter().map(|c| c.clamp(-1.0, 1.0).acos()).collect();
    let equal = a.ncols() == b.ncols() && angles.iter().all(|t| *t <= angle_tol);
    Ok(MsTangentCheck { equal, chart_dim: a.ncols(), kernel_dim: b.ncols(), angles })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curvature_part() {
        assert_eq!(a_sigma_mode(1, 3.7), 0.0);
        assert_eq!(a_sigma_mode(0, 1.0), -1.0);
        assert_eq!(a_sigma_mode(3, 2.0), 2.0);
    }

    /// `v = r^k + R_out^{2k} r^{−k}` normalized at `R` has zero flux at `R_out`.
    fn annulus_derivative(k: f64, r: f64, r_out: f64) -> f64 {
        let q = (r / r_out).powf(2.0 * k);
        k / r * (q - 1.0) / (q + 1.0)
    }

    #[test]
    fn radial_solves_match_closed_forms() {
        for k in 1..=6usize {
            let inner = inner_derivative(k, 1.0, 2000).unwrap();
            assert!((inner - k as f64).abs() < 1e-4 * k as f64, "k = {k}: {inner}");
            let outer = outer_derivative(k, 1.0, 3.0, 2000).unwrap();
            let exact = annulus_derivative(k as f64, 1.0, 3.0);
            assert!((outer - exact).abs() < 1e-5 * exact.abs(), "k = {k}: {outer} vs {exact}");
        }
        assert!(inner_derivative(0, 1.0, 100).unwrap().abs() < 1e-12);
        assert!(outer_derivative(0, 1.0, 3.0, 100).unwrap().abs() < 1e-12);
    }

    #[test]
    fn jump_values() {
        let cfg = MsConfig::default();
        let j0 = dtn_jump_mode(0, &cfg).unwrap();
        assert!(j0.abs() < 1e-9, "{j0}");
        let j2 = dtn_jump_mode(2, &cfg).unwrap();
        assert!((j2 + 4.0).abs() < 0.04, "{j2}");
        for k in 1..=6 {
            let near = dtn_jump_mode(k, &cfg).unwrap();
            let far = dtn_jump_mode(k, &MsConfig { r_out: 40.0, ..cfg }).unwrap();
            assert!((near - far).abs() < 0.005 * far.abs(), "k = {k}");
        }
        let coarse = MsConfig { radial_grid: 8, ..cfg };
        assert!(matches!(dtn_jump_mode(6, &coarse), Err(MsError::GridTooCoarse { k: 6, .. })));
        assert!(MsConfig { r_out: 0.5, ..cfg }.validate().is_err());
    }

    #[test]
    fn mode_report() {
        let rep = mode_eigenvalues(&MsConfig::default(), 1e-6).unwrap();
        assert_eq!(rep.kernel_dim, 3);
        assert_eq!(rep.zero_modes(), vec![0, 1]);
        assert!(rep.nondecreasing());
        assert!(rep.modes.iter().all(|m| m.lambda >= -1e-12));
        for m in &rep.modes[2..] {
            assert!((m.lambda / m.reference - 1.0).abs() < 0.01, "{m:?}");
        }
        assert!((rep.modes[2].lambda - 12.0).abs() < 0.12);
        assert!((rep.modes[3].lambda - 48.0).abs() < 0.48);
    }

    #[test]
    fn flat_symbol() {
        let rep = flat_symbol_check(&[1.0, 2.0], None, 0.002).unwrap();
        assert!((rep.rows[0].jump + 2.0).abs() < 2e-3);
        assert_eq!(rep.rows[1].reference, -16.0);
        let small = flat_symbol_check(&[0.5, 0.25, 0.125], None, 0.01).unwrap();
        assert!((symbol_scaling_slope(&small) - 3.0).abs() < 0.05);
        let (_, orders) = flat_symbol_ladder(&[0.5, 1.0, 2.0, 4.0], None, 0.02, 3).unwrap();
        assert!(orders.iter().all(|o| (o - 2.0).abs() < 0.2), "{orders:?}");
        assert!(flat_symbol_check(&[0.0], None, 0.01).is_err());
    }

    #[test]
    fn chart_geometry() {
        let mesh = circle_mesh(32);
        assert!(sphere_chart(&[0.0; 3], 1.0, &mesh).unwrap().iter().all(|x| *x == 0.0));
        assert!(sphere_chart(&[0.3, 0.0, 0.0], 2.0, &mesh).unwrap().iter().all(|x| (x - 0.3).abs() < 1e-15));
        // the chart lands on the shifted, dilated circle
        let z = [0.1, 0.2, -0.15];
        let rho = sphere_chart(&z, 1.5, &mesh).unwrap();
        for (t, p) in mesh.iter().zip(&rho) {
            let x = (1.5 + p) * t.cos() - z[1];
            let y = (1.5 + p) * t.sin() - z[2];
            assert!((x.hypot(y) - (1.5 + z[0])).abs() < 1e-13);
        }
        let h = [0.3, -0.7, 1.1];
        let d = sphere_chart_derivative(&h, 1.0, &mesh).unwrap();
        for (t, v) in mesh.iter().zip(&d) {
            assert!((v - (h[0] + h[1] * t.cos() + h[2] * t.sin())).abs() < 1e-6);
        }
        assert!(matches!(sphere_chart(&[0.0, 2.0, 0.0], 1.0, &mesh), Err(MsError::InvalidRadius { .. })));
    }

    #[test]
    fn tangent_space_is_the_kernel() {
        let cfg = MsConfig::default();
        assert!(ms_tangent_kernel_check(&cfg, &[], 1e-6, 1e-6).unwrap().equal);
        let extra = ms_tangent_kernel_check(&cfg, &[2], 1e-6, 1e-6).unwrap();
        assert!(!extra.equal && extra.chart_dim == 4 && extra.kernel_dim == 3);
        assert!(ms_tangent_kernel_check(&MsConfig { r: 2.0, r_out: 40.0, ..cfg }, &[], 1e-6, 1e-6).unwrap().equal);
    }
}
