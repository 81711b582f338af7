//! Traveling waves of the quasilinear bistable equation
//! `u_t = (σ(u_x))_x + f(u)` with `f(u) = u(1 − u)(u − a)`.
//!
//! A wave `u(t, x) = w(x + Vt)` solves `σ'(w')w'' − Vw' + f(w) = 0`, which is
//! the phase-plane system `ẇ = z`, `ż = (Vz − f(w))/σ'(z)`. The speed is found
//! by shooting along the unstable manifold of `(0, 0)` and bisecting between
//! paths that fall back to `z = 0` and paths that overshoot `w = 1`.

mod profile;
mod simulate;
mod spectrum;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::normal_form::VectorFieldSpec;
use crate::ode::{integrate_with, IntegrateOptions, OdeError, StopReason};
use crate::quad;

pub use profile::WaveProfile;
pub use simulate::{
    discrete_wave, simulate_perturbation, translate_residual, DiscreteWave, Perturbation, SimGrid, SimSettings, WaveSimReport,
};
pub use spectrum::{discretize_linearization, wave_spectrum, DiscreteLinearization, WaveSpectrumReport, LOCALIZED_MASS};

/// Tail bound used when truncating to `[−L, L]`.
pub const EPS_TAIL: f64 = 1e-8;
pub const EPS_LAUNCH: f64 = 1e-6;
/// Regularization of the arclength parametrization used while shooting.
const ARC_REG: f64 = 1e-2;
const SHOOT_SAMPLE: f64 = 5e-3;
const SHOOT_TOL: f64 = 1e-12;
const SHOOT_HORIZON: f64 = 1e4;

#[derive(Debug, Error, Clone)]
pub enum WaveError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shooting path stayed in the first quadrant for the whole step budget")]
    Inconclusive,
    #[error("bracket [{lo}, {hi}] does not separate falling back from overshooting")]
    BracketInvalid { lo: f64, hi: f64 },
    #[error("profile tails exceed {eps_tail:.1e} at ±{l} (max tail {tail:.3e})")]
    TailsTooFat { l: f64, eps_tail: f64, tail: f64 },
    #[error("profile is not monotone near s = {0}")]
    NotMonotone(f64),
    #[error("discrete wave did not converge: residual {0:.3e}")]
    DiscreteWave(f64),
    #[error("perturbation blew up at t = {0}")]
    BlowUp(f64),
    #[error("integration failed: {0}")]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Spectral(#[from] crate::spectral::SpectralError),
}

/// Diffusion flux `σ` with `σ(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sigma {
    Identity,
    /// `σ(r) = r + ε·tanh r`, so `σ'(r) = 1 + ε·sech² r ∈ [min(1, 1 + ε), max(1, 1 + ε)]`.
    Tanh {
        eps: f64,
    },
}

impl Sigma {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            Sigma::Identity => r,
            Sigma::Tanh { eps } => r + eps * r.tanh(),
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        match *self {
            Sigma::Identity => 1.0,
            Sigma::Tanh { eps } => {
                let c = r.cosh();
                1.0 + eps / (c * c)
            }
        }
    }

    /// Bounds `c₁ ≤ σ' ≤ c₂` on the real line.
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Sigma::Identity => (1.0, 1.0),
            Sigma::Tanh { eps } => ((1.0 + eps).min(1.0), (1.0 + eps).max(1.0)),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Sigma::Identity => "identity",
            Sigma::Tanh { .. } => "tanh",
        }
    }

    /// Builds a flux from a kind name and its parameter list.
    pub fn from_kind(kind: &str, params: &[f64]) -> Result<Self, WaveError> {
        match kind.to_ascii_lowercase().as_str() {
            "identity" | "id" => {
                if !params.is_empty() {
                    return Err(WaveError::InvalidParameter("identity flux takes no parameters".into()));
                }
                Ok(Sigma::Identity)
            }
            "tanh" => match params {
                [eps] if *eps > -1.0 && eps.is_finite() => Ok(Sigma::Tanh { eps: *eps }),
                _ => Err(WaveError::InvalidParameter("tanh flux takes one parameter eps > -1".into())),
            },
            other => Err(WaveError::InvalidParameter(format!("unknown flux kind '{other}'"))),
        }
    }
}

impl fmt::Display for Sigma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sigma::Identity => write!(f, "identity"),
            Sigma::Tanh { eps } => write!(f, "r + {eps}·tanh(r)"),
        }
    }
}

impl FromStr for Sigma {
    type Err = WaveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Sigma::from_kind(s, &[])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveProblem {
    pub a: f64,
    pub sigma: Sigma,
}

impl WaveProblem {
    pub fn new(a: f64, sigma: Sigma) -> Result<Self, WaveError> {
        if !(a > 0.0 && a < 0.5) {
            return Err(WaveError::InvalidParameter(format!("a = {a} must lie in (0, 1/2)")));
        }
        if let Sigma::Tanh { eps } = sigma {
            if !(eps > -1.0) {
                return Err(WaveError::InvalidParameter(format!("tanh flux needs eps > -1, got {eps}")));
            }
        }
        Ok(Self { a, sigma })
    }

    pub fn f(&self, u: f64) -> f64 {
        u * (1.0 - u) * (u - self.a)
    }

    pub fn df(&self, u: f64) -> f64 {
        -3.0 * u * u + 2.0 * (1.0 + self.a) * u - self.a
    }

    /// `F(y) = ∫₀^y f`.
    pub fn big_f(&self, y: f64) -> f64 {
        let a = self.a;
        y * y * (-0.25 * y * y + (1.0 + a) * y / 3.0 - 0.5 * a)
    }

    /// `G(y) = ∫₀^y σ'(r)·r dr`, by adaptive quadrature.
    pub fn big_g(&self, y: f64) -> f64 {
        match self.sigma {
            Sigma::Identity => 0.5 * y * y,
            s => quad::integrate(|r| s.derivative(r) * r, 0.0, y, 1e-15),
        }
    }

    /// Eigenvalues `(λ₁ > 0, λ₂ < 0)` of the phase-plane linearization at `(0, 0)`.
    pub fn eigs_left(&self, v: f64) -> (f64, f64) {
        saddle_eigs(v, self.a, self.sigma.derivative(0.0))
    }

    /// Eigenvalues at `(1, 0)`, where `f'(1) = a − 1`.
    pub fn eigs_right(&self, v: f64) -> (f64, f64) {
        saddle_eigs(v, 1.0 - self.a, self.sigma.derivative(0.0))
    }

    fn phase_rhs(&self, v: f64, w: f64, z: f64) -> (f64, f64) {
        (z, (v * z - self.f(w)) / self.sigma.derivative(z))
    }
}

/// Roots of `σ'λ² − Vλ − c = 0`.
fn saddle_eigs(v: f64, c: f64, sp0: f64) -> (f64, f64) {
    let disc = (v * v + 4.0 * c * sp0).sqrt();
    ((v + disc) / (2.0 * sp0), (v - disc) / (2.0 * sp0))
}

/// The phase-plane field together with its linearizations at the two
/// saddles.
#[derive(Debug, Clone)]
pub struct PhaseField {
    pub field: VectorFieldSpec,
    /// Jacobians at `(0, 0)` and `(1, 0)`.
    pub jac_left: DMatrix<f64>,
    pub jac_right: DMatrix<f64>,
}

pub fn phase_field(wp: &WaveProblem, v: f64) -> Result<PhaseField, WaveError> {
    if !(v >= 0.0) {
        return Err(WaveError::InvalidParameter(format!("wave speed {v} must be nonnegative")));
    }
    let p = *wp;
    let sigma = wp.sigma;
    let field = VectorFieldSpec::new(
        "phase-plane",
        2,
        move |u, out| {
            let (dw, dz) = p.phase_rhs(v, u[0], u[1]);
            out[0] = dw;
            out[1] = dz;
        },
        vec![0.5, 0.0],
        10.0,
    )
    .with_jacobian(move |u| {
        let (w, z) = (u[0], u[1]);
        let sp = sigma.derivative(z);
        // d/dz of 1/σ'(z) by a centered difference; exact for the identity flux
        let h = 1e-6 * (1.0 + z.abs());
        let dinv = (1.0 / sigma.derivative(z + h) - 1.0 / sigma.derivative(z - h)) / (2.0 * h);
        let num = v * z - p.f(w);
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -p.df(w) / sp, v / sp + num * dinv])
    });
    let at = |w: f64| {
        let sp = sigma.derivative(0.0);
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -p.df(w) / sp, v / sp])
    };
    Ok(PhaseField { field, jac_left: at(0.0), jac_right: at(1.0) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShootOutcome {
    /// Reached `z ≤ 0` with `w < 1`.
    FellBack,
    /// Reached `w ≥ 1` with `z > 0`.
    Overshot,
    /// Entered the `eps_connect` ball around `(1, 0)`.
    Connected,
}

/// Samples of a shooting path; `s` is the original independent variable.
#[derive(Debug, Clone, Default)]
pub struct ShootPath {
    pub s: Vec<f64>,
    pub w: Vec<f64>,
    pub z: Vec<f64>,
}

impl ShootPath {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ShootResult {
    pub outcome: ShootOutcome,
    pub path: ShootPath,
}

/// Options for [`shoot`].
#[derive(Debug, Clone, Copy)]
pub struct ShootOptions {
    pub eps_launch: f64,
    pub eps_connect: f64,
    /// When false the path is followed through the neighborhood of `(1, 0)`
    /// until it either falls back or overshoots.
    pub stop_on_connect: bool,
}

impl Default for ShootOptions {
    fn default() -> Self {
        Self { eps_launch: EPS_LAUNCH, eps_connect: 1e-3, stop_on_connect: true }
    }
}

fn classify_state(w: f64, z: f64, opts: &ShootOptions) -> Option<ShootOutcome> {
    if opts.stop_on_connect && (w - 1.0).hypot(z) < opts.eps_connect {
        Some(ShootOutcome::Connected)
    } else if z <= 0.0 && w < 1.0 {
        Some(ShootOutcome::FellBack)
    } else if w >= 1.0 && z > 0.0 {
        Some(ShootOutcome::Overshot)
    } else {
        None
    }
}

/// Follows the unstable manifold of `(0, 0)` from `eps_launch·(1/λ₁, 1)`.
///
/// The path is integrated in the regularized arclength `dσ = (|F| + η) ds`
/// so the slow passages near the saddles take bounded effort; `s` is carried
/// along as a third component.
pub fn shoot(wp: &WaveProblem, v: f64, opts: &ShootOptions) -> Result<ShootResult, WaveError> {
    if !(opts.eps_launch > 0.0) {
        return Err(WaveError::InvalidParameter("launch offset must be positive".into()));
    }
    phase_field(wp, v)?;
    let (l1, _) = wp.eigs_left(v);
    let dir = [1.0 / l1, 1.0];
    let nd = dir[0].hypot(dir[1]);
    let u0 = [opts.eps_launch * dir[0] / nd, opts.eps_launch * dir[1] / nd, 0.0];

    let p = *wp;
    let arc = VectorFieldSpec::new(
        "phase-plane-arclength",
        3,
        move |u, out| {
            let (dw, dz) = p.phase_rhs(v, u[0], u[1]);
            let k = 1.0 / (dw.hypot(dz) + ARC_REG);
            out[0] = dw * k;
            out[1] = dz * k;
            out[2] = k;
        },
        vec![0.5, 0.0, 0.0],
        f64::INFINITY,
    );
    let o = *opts;
    let iopts = IntegrateOptions::new(SHOOT_TOL).uniform(SHOOT_SAMPLE).stop_when(move |_, u| classify_state(u[0], u[1], &o).is_some());
    let traj = match integrate_with(&arc, &u0, SHOOT_HORIZON, &iopts) {
        Ok(t) => t,
        Err(OdeError::StepBudget(_)) => return Err(WaveError::Inconclusive),
        Err(e) => return Err(e.into()),
    };
    if traj.stop != StopReason::Predicate {
        return Err(WaveError::Inconclusive);
    }
    let last = traj.last_state();
    let outcome = classify_state(last[0], last[1], opts).ok_or(WaveError::Inconclusive)?;
    let path = ShootPath {
        s: traj.states.iter().map(|u| u[2]).collect(),
        w: traj.states.iter().map(|u| u[0]).collect(),
        z: traj.states.iter().map(|u| u[1]).collect(),
    };
    Ok(ShootResult { outcome, path })
}

fn side(wp: &WaveProblem, v: f64, eps_launch: f64) -> Result<ShootOutcome, WaveError> {
    let opts = ShootOptions { eps_launch, stop_on_connect: false, ..ShootOptions::default() };
    Ok(shoot(wp, v, &opts)?.outcome)
}

#[derive(Debug, Clone)]
pub struct WaveSolution {
    pub v_star: f64,
    /// Final bracket `(FellBack speed, Overshot speed)`.
    pub bracket: (f64, f64),
    pub bisections: usize,
    pub profile: WaveProfile,
}

/// Bisection on the speed between falling back and overshooting. The upper
/// end of `bracket` is doubled until it overshoots.
pub fn find_speed(wp: &WaveProblem, bracket: (f64, f64), tol_v: f64) -> Result<WaveSolution, WaveError> {
    let (mut lo, mut hi) = bracket;
    if !(lo >= 0.0 && hi > lo && tol_v > 0.0) {
        return Err(WaveError::InvalidParameter(format!("bad bracket [{lo}, {hi}] or tolerance {tol_v}")));
    }
    if side(wp, lo, EPS_LAUNCH)? != ShootOutcome::FellBack {
        return Err(WaveError::BracketInvalid { lo, hi });
    }
    let mut doublings = 0;
    while side(wp, hi, EPS_LAUNCH)? != ShootOutcome::Overshot {
        doublings += 1;
        if doublings > 10 {
            return Err(WaveError::BracketInvalid { lo, hi });
        }
        lo = hi;
        hi *= 2.0;
    }
    let mut bisections = 0;
    while hi - lo > tol_v {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match side(wp, mid, EPS_LAUNCH)? {
            ShootOutcome::FellBack => lo = mid,
            _ => hi = mid,
        }
        bisections += 1;
    }
    let v_star = 0.5 * (lo + hi);
    let profile = WaveProfile::build(wp, v_star)?;
    Ok(WaveSolution { v_star, bracket: (lo, hi), bisections, profile })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    /// Max over path intervals of `|Δ(G + F) − V∫z²| / Δs`.
    pub max_residual: f64,
    /// Max deviation of `G + F` from its initial value.
    pub drift: f64,
    /// `V∫z² ds` along the whole path.
    pub total_dissipation: f64,
}

const GL4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

/// Cubic Hermite value on `[0, h]` from end values and slopes.
pub(crate) fn hermite(t: f64, h: f64, y0: f64, y1: f64, d0: f64, d1: f64) -> f64 {
    let x = t / h;
    let x2 = x * x;
    let x3 = x2 * x;
    (2.0 * x3 - 3.0 * x2 + 1.0) * y0 + (x3 - 2.0 * x2 + x) * h * d0 + (-2.0 * x3 + 3.0 * x2) * y1 + (x3 - x2) * h * d1
}

/// Checks `d/ds (G(z) + F(w)) = V z²` along sampled paths: the increment of
/// `G + F` over each interval is compared with `V∫z²`, where `z` is the cubic
/// Hermite interpolant of the samples and their slopes from the ODE.
pub fn energy_residual(wp: &WaveProblem, path: &ShootPath, v: f64) -> EnergyReport {
    let e: Vec<f64> = path.w.iter().zip(&path.z).map(|(w, z)| wp.big_g(*z) + wp.big_f(*w)).collect();
    let dz: Vec<f64> = path.w.iter().zip(&path.z).map(|(w, z)| wp.phase_rhs(v, *w, *z).1).collect();
    let mut max_residual: f64 = 0.0;
    let mut total = 0.0;
    for i in 1..path.len() {
        let h = path.s[i] - path.s[i - 1];
        if !(h > 0.0) {
            continue;
        }
        let integral: f64 = GL4
            .iter()
            .map(|(x, wt)| {
                let t = 0.5 * h * (1.0 + x);
                let zt = hermite(t, h, path.z[i - 1], path.z[i], dz[i - 1], dz[i]);
                0.5 * h * wt * zt * zt
            })
            .sum();
        total += v * integral;
        max_residual = max_residual.max((e[i] - e[i - 1] - v * integral).abs() / h);
    }
    let drift = e.iter().fold(0.0f64, |m, x| m.max((x - e[0]).abs()));
    EnergyReport { max_residual, drift, total_dissipation: total }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wp(a: f64) -> WaveProblem {
        WaveProblem::new(a, Sigma::Identity).unwrap()
    }

    #[test]
    fn closed_form_profile_solves_the_wave_equation() {
        // w = 1/(1 + e^{−s/√2}) with V = (1 − 2a)/√2
        for a in [0.1, 0.25, 0.4] {
            let p = wp(a);
            let v = (1.0 - 2.0 * a) / 2f64.sqrt();
            for k in 0..41 {
                let s = -10.0 + 0.5 * k as f64;
                let w = 1.0 / (1.0 + (-s / 2f64.sqrt()).exp());
                let w1 = w * (1.0 - w) / 2f64.sqrt();
                let w2 = w * (1.0 - w) * (1.0 - 2.0 * w) / 2.0;
                assert!((w2 - v * w1 + p.f(w)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn saddle_data() {
        let p = wp(0.25);
        let (l1, l2) = p.eigs_left(0.0);
        assert!((l1 - 0.5).abs() < 1e-15 && (l2 + 0.5).abs() < 1e-15);
        let pf = phase_field(&p, 0.0).unwrap();
        let ev = pf.jac_left.complex_eigenvalues();
        let mut re: Vec<f64> = ev.iter().map(|c| c.re).collect();
        re.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((re[0] + 0.5).abs() < 1e-12 && (re[1] - 0.5).abs() < 1e-12);
        assert_eq!(pf.field.eval(&[0.0, 0.0]), vec![0.0, 0.0]);
        let h = 1e-6;
        assert!(((p.f(h) - p.f(-h)) / (2.0 * h) + 0.25).abs() < 1e-9);
        assert!(((p.f(1.0 + h) - p.f(1.0 - h)) / (2.0 * h) - (0.25 - 1.0)).abs() < 1e-9);
        assert!((p.df(1.0) - (p.a - 1.0)).abs() < 1e-15);
        // exact Jacobian agrees with finite differences away from the saddles
        let u = [0.3, 0.2];
        let pf = phase_field(&WaveProblem::new(0.25, Sigma::Tanh { eps: 0.1 }).unwrap(), 0.3).unwrap();
        let d = pf.field.jacobian(&u) - pf.field.fd_jacobian(&u);
        assert!(d.amax() < 1e-7);
        assert!(phase_field(&p, -0.1).is_err());
    }

    #[test]
    fn primitive_values() {
        let p = wp(0.25);
        assert!((p.big_f(1.0) - 1.0 / 24.0).abs() < 1e-15);
        assert!((p.big_f(1.0) - (0.5 - p.a) / 6.0).abs() < 1e-15);
        let q = WaveProblem::new(0.25, Sigma::Tanh { eps: 0.1 }).unwrap();
        for y in [-1.3, 0.2, 0.7, 2.0f64] {
            let closed = 0.5 * y * y + 0.1 * (y * y.tanh() - y.cosh().ln());
            assert!((q.big_g(y) - closed).abs() < 1e-13, "{y}");
        }
        assert!(WaveProblem::new(0.5, Sigma::Identity).is_err());
        assert!(WaveProblem::new(0.0, Sigma::Identity).is_err());
    }

    #[test]
    fn shooting_outcomes() {
        let p = wp(0.25);
        assert_eq!(shoot(&p, 0.0, &ShootOptions::default()).unwrap().outcome, ShootOutcome::FellBack);
        assert_eq!(shoot(&p, 5.0, &ShootOptions::default()).unwrap().outcome, ShootOutcome::Overshot);
        let v = (1.0 - 2.0 * 0.25) / 2f64.sqrt();
        assert_eq!(shoot(&p, v, &ShootOptions::default()).unwrap().outcome, ShootOutcome::Connected);
    }

    #[test]
    fn first_integral_without_drift() {
        let p = wp(0.25);
        let r = shoot(&p, 0.0, &ShootOptions::default()).unwrap();
        let e = energy_residual(&p, &r.path, 0.0);
        assert!(e.drift < 1e-8, "{e:?}");
        assert!(e.max_residual < 1e-6, "{e:?}");
    }

    #[test]
    fn energy_balance_with_drift() {
        let q = WaveProblem::new(0.25, Sigma::Tanh { eps: 0.1 }).unwrap();
        for v in [0.2, 0.5, 1.0] {
            let r = shoot(&q, v, &ShootOptions::default()).unwrap();
            let e = energy_residual(&q, &r.path, v);
            assert!(e.max_residual < 1e-6, "V = {v}: {e:?}");
        }
    }

    #[test]
    fn sigma_parsing() {
        assert_eq!(Sigma::from_kind("identity", &[]).unwrap(), Sigma::Identity);
        assert_eq!(Sigma::from_kind("tanh", &[0.1]).unwrap(), Sigma::Tanh { eps: 0.1 });
        assert!(Sigma::from_kind("tanh", &[]).is_err());
        assert!(Sigma::from_kind("cubic", &[]).is_err());
        assert_eq!(Sigma::Tanh { eps: -0.5 }.bounds(), (0.5, 1.0));
    }
}
