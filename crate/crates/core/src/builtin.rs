//! Reference systems with a circle of equilibria.
//!
//! All planar fields are written in Cartesian form with `r = |(x, y)|`:
//!
//! * `Ex1`: `ẋ = (x + y)(1 − r)`, `ẏ = (y − x)(1 − r)`; polar form
//!   `ṙ = −r(r − 1)`, `θ̇ = r − 1`.
//! * `Ex2m1`, `Ex2m2`: `ẋ = −x(r − 1)³ − y(r − 1)^m`,
//!   `ẏ = −y(r − 1)³ + x(r − 1)^m`; polar form `ṙ = −r(r − 1)³`,
//!   `θ̇ = (r − 1)^m`.
//! * `Hyperbolic3D`: `ẋ = (x − y)(r − 1)`, `ẏ = (x + y)(r − 1)`, `ẇ = −w`;
//!   polar form `ṙ = r(r − 1)`, `θ̇ = r − 1`.
//!
//! The unit circle (times `{w = 0}`) is the equilibrium set in every case.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use thiserror::Error;

use rayon::prelude::*;

use crate::normal_form::{linearize, ManifoldChart, Tolerances, VectorFieldSpec};
use crate::ode::{estimate_rate_vs_gap, simulate_and_assess, ConvergenceReport, FitWindow, IntegrateOptions, OdeError, Trajectory};
use crate::spectral::{eigen_decompose, spectral_projections};

/// Radius of the excluded disc around the origin, where `r` is not smooth.
const ORIGIN_GUARD: f64 = 1e-3;
const DOMAIN_RADIUS: f64 = 10.0;
/// Half-width of the band around `r = 1` where the spiral relations are
/// singular.
pub const SINGULAR_BAND: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExampleKind {
    Ex1,
    Ex2m1,
    Ex2m2,
    Hyperbolic3D,
}

impl ExampleKind {
    pub const ALL: [ExampleKind; 4] = [ExampleKind::Ex1, ExampleKind::Ex2m1, ExampleKind::Ex2m2, ExampleKind::Hyperbolic3D];

    pub fn name(&self) -> &'static str {
        match self {
            ExampleKind::Ex1 => "Ex1",
            ExampleKind::Ex2m1 => "Ex2m1",
            ExampleKind::Ex2m2 => "Ex2m2",
            ExampleKind::Hyperbolic3D => "Hyperbolic3D",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ExampleKind::Hyperbolic3D => 3,
            _ => 2,
        }
    }

    pub fn field(&self) -> VectorFieldSpec {
        match self {
            ExampleKind::Ex1 => example_one(),
            ExampleKind::Ex2m1 => spiral_field(1),
            ExampleKind::Ex2m2 => spiral_field(2),
            ExampleKind::Hyperbolic3D => hyperbolic_field(),
        }
    }

    /// Unit circle based at `(0, 1[, 0])`.
    pub fn chart(&self) -> ManifoldChart {
        ManifoldChart::unit_circle(self.dim())
    }

    pub fn u_star(&self) -> Vec<f64> {
        self.chart().base_point()
    }
}

impl fmt::Display for ExampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExampleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExampleKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown builtin problem '{s}' (expected Ex1, Ex2m1, Ex2m2 or Hyperbolic3D)"))
    }
}

/// Builtin planar field with its exact Jacobian.
pub fn example_field(kind: ExampleKind) -> VectorFieldSpec {
    kind.field()
}

fn punctured(name: &str, n: usize, rhs: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> VectorFieldSpec {
    VectorFieldSpec::new(name, n, rhs, vec![0.0; n], DOMAIN_RADIUS).with_hole(ORIGIN_GUARD)
}

fn example_one() -> VectorFieldSpec {
    punctured("Ex1", 2, |u, out| {
        let (x, y) = (u[0], u[1]);
        let s = 1.0 - x.hypot(y);
        out[0] = (x + y) * s;
        out[1] = (y - x) * s;
    })
    .with_jacobian(|u| {
        let (x, y) = (u[0], u[1]);
        let r = x.hypot(y);
        let s = 1.0 - r;
        let (rx, ry) = (x / r, y / r);
        DMatrix::from_row_slice(2, 2, &[s - (x + y) * rx, s - (x + y) * ry, -s - (y - x) * rx, s - (y - x) * ry])
    })
}

fn spiral_field(m: i32) -> VectorFieldSpec {
    punctured(&format!("Ex2m{m}"), 2, move |u, out| {
        let (x, y) = (u[0], u[1]);
        let s = x.hypot(y) - 1.0;
        let s3 = s * s * s;
        let sm = s.powi(m);
        out[0] = -x * s3 - y * sm;
        out[1] = -y * s3 + x * sm;
    })
    .with_jacobian(move |u| {
        let (x, y) = (u[0], u[1]);
        let r = x.hypot(y);
        let s = r - 1.0;
        let (rx, ry) = (x / r, y / r);
        let s3 = s * s * s;
        let ds3 = 3.0 * s * s;
        let sm = s.powi(m);
        let dsm = m as f64 * s.powi(m - 1);
        DMatrix::from_row_slice(
            2,
            2,
            &[
                -s3 - x * ds3 * rx - y * dsm * rx,
                -x * ds3 * ry - sm - y * dsm * ry,
                -y * ds3 * rx + sm + x * dsm * rx,
                -s3 - y * ds3 * ry + x * dsm * ry,
            ],
        )
    })
}

/// A field on `(ℝ² \ {0}) × ℝ` whose equilibria form the unit circle in
/// `{w = 0}`; at `(0, 1, 0)` the linearization `A₀ = −F'` has eigenvalues
/// `0, 1, −1`.
pub fn hyperbolic_field() -> VectorFieldSpec {
    punctured("Hyperbolic3D", 3, |u, out| {
        let (x, y, w) = (u[0], u[1], u[2]);
        let s = x.hypot(y) - 1.0;
        out[0] = (x - y) * s;
        out[1] = (x + y) * s;
        out[2] = -w;
    })
    .with_jacobian(|u| {
        let (x, y) = (u[0], u[1]);
        let r = x.hypot(y);
        let s = r - 1.0;
        let (rx, ry) = (x / r, y / r);
        DMatrix::from_row_slice(3, 3, &[s + (x - y) * rx, -s + (x - y) * ry, 0.0, s + (x + y) * rx, s + (x + y) * ry, 0.0, 0.0, 0.0, -1.0])
    })
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelationError {
    #[error("trajectory enters the singular band |r - 1| < {band} at sample {index} (r = {r})")]
    SingularBand { index: usize, r: f64, band: f64 },
    #[error("trajectory passes too close to the origin at sample {0}")]
    NearOrigin(usize),
    #[error("the relation is defined only for the planar examples")]
    NotPlanar,
    #[error("angle jumps by {0:.3} rad between samples; refine the output")]
    AngleJump(f64),
}

/// Trajectory relation `θ(r)` fitted along a computed path.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarRelation {
    pub kind: ExampleKind,
    pub c0: f64,
    pub residual: f64,
    /// Total change of the unwrapped angle.
    pub theta_variation: f64,
}

/// `θ − relation(r)`, which is constant along trajectories.
fn relation_constant(kind: ExampleKind, r: f64, theta: f64) -> f64 {
    match kind {
        ExampleKind::Ex1 => theta + r.ln(),
        ExampleKind::Ex2m1 => theta - ((r - 1.0).abs() / r).ln() - 1.0 / (r - 1.0),
        ExampleKind::Ex2m2 => theta + ((r - 1.0).abs() / r).ln(),
        ExampleKind::Hyperbolic3D => unreachable!(),
    }
}

/// Unwrapped polar angle `atan2(y, x)` along a path: increments are taken
/// in `(−π, π]`.
pub fn unwrapped_angles(states: &[Vec<f64>]) -> Result<Vec<f64>, RelationError> {
    let mut out = Vec::with_capacity(states.len());
    let mut prev_raw = 0.0;
    for (i, u) in states.iter().enumerate() {
        let raw = u[1].atan2(u[0]);
        if i == 0 {
            out.push(raw);
        } else {
            let mut d = raw - prev_raw;
            while d > std::f64::consts::PI {
                d -= 2.0 * std::f64::consts::PI;
            }
            while d <= -std::f64::consts::PI {
                d += 2.0 * std::f64::consts::PI;
            }
            if d.abs() > 0.5 * std::f64::consts::PI {
                return Err(RelationError::AngleJump(d));
            }
            out.push(out[i - 1] + d);
        }
        prev_raw = raw;
    }
    Ok(out)
}

/// Fits `c0` as the mean of `θ − relation(r)` and reports the largest
/// deviation from it.
pub fn polar_relation_residual(traj: &Trajectory, kind: ExampleKind) -> Result<PolarRelation, RelationError> {
    if kind == ExampleKind::Hyperbolic3D {
        return Err(RelationError::NotPlanar);
    }
    let theta = unwrapped_angles(&traj.states)?;
    let mut consts = Vec::with_capacity(theta.len());
    let constant_path = traj.states.windows(2).all(|w| w[0] == w[1]);
    for (i, (u, th)) in traj.states.iter().zip(&theta).enumerate() {
        let r = u[0].hypot(u[1]);
        if r < ORIGIN_GUARD {
            return Err(RelationError::NearOrigin(i));
        }
        if constant_path {
            consts.push(0.0);
            continue;
        }
        if kind != ExampleKind::Ex1 && (r - 1.0).abs() < SINGULAR_BAND {
            return Err(RelationError::SingularBand { index: i, r, band: SINGULAR_BAND });
        }
        consts.push(relation_constant(kind, r, *th));
    }
    let c0 = consts.iter().sum::<f64>() / consts.len() as f64;
    let residual = consts.iter().map(|c| (c - c0).abs()).fold(0.0, f64::max);
    let theta_variation = theta.last().copied().unwrap_or(0.0) - theta.first().copied().unwrap_or(0.0);
    Ok(PolarRelation { kind, c0, residual, theta_variation })
}

/// Largest increase of `V = (r − 1)²` between consecutive samples.
pub fn lyapunov_check(traj: &Trajectory) -> f64 {
    let v: Vec<f64> = traj.states.iter().map(|u| (u[0].hypot(u[1]) - 1.0).powi(2)).collect();
    v.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

/// One run of an initial-condition sweep.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub u0: Vec<f64>,
    pub report: ConvergenceReport,
    /// `ω̂ / min Re σ(A_s)` at the base point, for converged runs.
    pub rate_ratio: Option<f64>,
    pub on_slice: bool,
}

/// Settings shared by the sweeps.
#[derive(Debug, Clone, Copy)]
pub struct SweepConfig {
    pub delta: f64,
    pub rho: f64,
    pub t_max: f64,
    pub tol: f64,
}

/// Runs `simulate_and_assess` from every start in parallel; the flag marks
/// starts on a distinguished slice.
pub fn run_sweep(kind: ExampleKind, starts: Vec<(Vec<f64>, bool)>, cfg: &SweepConfig) -> Result<Vec<SweepRun>, OdeError> {
    let fs = kind.field();
    let chart = kind.chart();
    let tol = Tolerances::default();
    let split = linearize(&fs, &kind.u_star(), tol.eps_eq)
        .ok()
        .and_then(|a0| eigen_decompose(&a0, tol.tol_zero, tol.gap).ok().map(|r| (a0, r)))
        .and_then(|(a0, r)| spectral_projections(&a0, &r).ok());
    let opts = IntegrateOptions::new(cfg.tol);
    let window = FitWindow::default();
    starts
        .into_par_iter()
        .map(|(u0, on_slice)| {
            let (_, report) = simulate_and_assess(&fs, &chart, &u0, cfg.t_max, cfg.rho, &opts, &window)?;
            let rate_ratio = split.as_ref().and_then(|s| estimate_rate_vs_gap(&report, s).ok());
            Ok(SweepRun { u0, report, rate_ratio, on_slice })
        })
        .collect()
}

/// Starts on the circle of radius `delta` around `u_*`, at `count`
/// equally spaced directions.
pub fn stability_sweep(kind: ExampleKind, count: usize, cfg: &SweepConfig) -> Result<Vec<SweepRun>, OdeError> {
    let u_star = kind.u_star();
    let starts = (0..count)
        .map(|k| {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            let mut u = u_star.clone();
            u[0] += cfg.delta * phi.cos();
            u[1] += cfg.delta * phi.sin();
            (u, false)
        })
        .collect();
    run_sweep(kind, starts, cfg)
}

/// Starts for the normally hyperbolic field inside the `delta` ball
/// around `(0, 1, 0)`: `generic` points on a Fibonacci sphere (alternating
/// between radius `delta` and `delta/2`) and `on_slice` points on the
/// invariant cylinder `r = 1`, which lies in the stable fibers.
pub fn dichotomy_sweep(generic: usize, on_slice: usize, cfg: &SweepConfig) -> Result<Vec<SweepRun>, OdeError> {
    let kind = ExampleKind::Hyperbolic3D;
    let chart = kind.chart();
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut starts = Vec::with_capacity(generic + on_slice);
    for k in 0..generic {
        let z = 1.0 - 2.0 * (k as f64 + 0.5) / generic as f64;
        let ring = (1.0 - z * z).sqrt();
        let a = golden * k as f64;
        let radius = if k % 2 == 0 { cfg.delta } else { 0.5 * cfg.delta };
        starts.push((vec![radius * ring * a.cos(), 1.0 + radius * ring * a.sin(), radius * z], false));
    }
    for j in 0..on_slice {
        // half-offset angles keep w away from 0, where the start would be
        // an equilibrium
        let a = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / on_slice as f64;
        let mut u = chart.eval(&[0.6 * cfg.delta * a.cos()]);
        u[2] = 0.6 * cfg.delta * a.sin();
        starts.push((u, true));
    }
    run_sweep(kind, starts, cfg)
}
