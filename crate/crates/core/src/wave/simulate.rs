//! Method-of-lines simulation of perturbations of the wave in the moving
//! frame, `v_t = (σ(v_y + w_y))_y − V(v_y + w_y) + f(v + w)`.

use super::spectrum::{assemble, wave_spectrum};
use super::{WaveError, WaveProfile, EPS_TAIL};
use crate::linalg::{norm2, norm_inf, solve_tridiagonal};
use crate::normal_form::VectorFieldSpec;
use crate::ode::{fit_exponential_tail, integrate_with, ConvergenceReport, FitWindow, IntegrateOptions, Outcome, StopReason};

const NEWTON_MAX: usize = 30;
const NEWTON_TOL: f64 = 1e-12;
const OUTPUT_SAMPLES: f64 = 300.0;

/// Uniform grid of `n` interior nodes on `[−L, L]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimGrid {
    pub l: f64,
    pub n: usize,
}

impl Default for SimGrid {
    fn default() -> Self {
        Self { l: 40.0, n: 1000 }
    }
}

impl SimGrid {
    pub fn h(&self) -> f64 {
        2.0 * self.l / (self.n + 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.h();
        (1..=self.n).map(|i| -self.l + i as f64 * h).collect()
    }
}

/// Exact equilibrium of the discretized moving-frame equation, with the
/// speed solved for together with the nodes.
#[derive(Debug, Clone)]
pub struct DiscreteWave {
    pub grid: SimGrid,
    pub nodes: Vec<f64>,
    pub u: Vec<f64>,
    pub v: f64,
    pub residual: f64,
    pub iterations: usize,
}

struct Discretization<'a> {
    profile: &'a WaveProfile,
    h: f64,
}

impl Discretization<'_> {
    /// `(σ(u_y))_y − V·u_y + f(u)` with `u = 0` at `−L` and `u = 1` at `L`.
    fn residual(&self, u: &[f64], v: f64, out: &mut [f64]) {
        let n = u.len();
        let h = self.h;
        let wp = &self.profile.problem;
        let at = |i: isize| -> f64 {
            if i < 0 {
                0.0
            } else if i as usize >= n {
                1.0
            } else {
                u[i as usize]
            }
        };
        let mut flux_left = wp.sigma.eval((at(0) - at(-1)) / h);
        for k in 0..n {
            let i = k as isize;
            let flux_right = wp.sigma.eval((at(i + 1) - at(i)) / h);
            out[k] = (flux_right - flux_left) / h - v * (at(i + 1) - at(i - 1)) / (2.0 * h) + wp.f(u[k]);
            flux_left = flux_right;
        }
    }

    /// Coefficients `σ'` at the half nodes and `−f'` at the nodes, so that
    /// `assemble` gives minus the Jacobian of `residual`.
    fn linear_parts(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = u.len();
        let wp = &self.profile.problem;
        let ext = |i: usize| -> f64 {
            if i == 0 {
                0.0
            } else if i > n {
                1.0
            } else {
                u[i - 1]
            }
        };
        let c = (0..=n).map(|j| wp.sigma.derivative((ext(j + 1) - ext(j)) / self.h)).collect();
        let q = u.iter().map(|x| -wp.df(*x)).collect();
        (c, q)
    }
}

/// Bordered Newton for `(u, V)` with the phase fixed by
/// `Σ w'(s_k)(u_k − w(s_k)) = 0`, started from the sampled profile.
pub fn discrete_wave(profile: &WaveProfile, grid: SimGrid) -> Result<DiscreteWave, WaveError> {
    if grid.n < 3 || !(grid.l > 0.0) {
        return Err(WaveError::InvalidParameter("grid needs L > 0 and at least 3 nodes".into()));
    }
    profile.check(grid.l, EPS_TAIL)?;
    let h = grid.h();
    let nodes = grid.nodes();
    let d = Discretization { profile, h };
    let samples: Vec<(f64, f64)> = nodes.iter().map(|s| profile.eval(*s)).collect();
    let w0: Vec<f64> = samples.iter().map(|x| x.0).collect();
    let c_phase: Vec<f64> = samples.iter().map(|x| x.1).collect();
    let mut u = w0.clone();
    let mut v = profile.v;
    let n = grid.n;
    let mut r = vec![0.0; n];
    for it in 0..NEWTON_MAX {
        d.residual(&u, v, &mut r);
        let res = norm_inf(&r);
        if res < NEWTON_TOL {
            return Ok(DiscreteWave { grid, nodes, u, v, residual: res, iterations: it });
        }
        let (c, q) = d.linear_parts(&u);
        let a = assemble(&c, &q, v, h);
        // J = −A
        let neg = |x: &[f64]| x.iter().map(|y| -y).collect::<Vec<_>>();
        let (js, jd, ju) = (neg(&a.sub), neg(&a.diag), neg(&a.sup));
        let b: Vec<f64> = (0..n)
            .map(|k| {
                let up = if k + 1 < n { u[k + 1] } else { 1.0 };
                let um = if k > 0 { u[k - 1] } else { 0.0 };
                -(up - um) / (2.0 * h)
            })
            .collect();
        let x = solve_tridiagonal(&js, &jd, &ju, &r).ok_or(WaveError::DiscreteWave(res))?;
        let y = solve_tridiagonal(&js, &jd, &ju, &b).ok_or(WaveError::DiscreteWave(res))?;
        let dot = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| a * b).sum::<f64>();
        let phase: f64 = dot(&c_phase, &u) - dot(&c_phase, &w0);
        let dv = (phase - dot(&c_phase, &x)) / dot(&c_phase, &y);
        for k in 0..n {
            u[k] += -x[k] - dv * y[k];
        }
        v += dv;
    }
    d.residual(&u, v, &mut r);
    Err(WaveError::DiscreteWave(norm_inf(&r)))
}

/// Initial perturbation `v0` on the simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    Zero,
    /// `amplitude·exp(−((s − center)/width)²)`.
    Gaussian {
        amplitude: f64,
        center: f64,
        width: f64,
    },
    /// `w(· + alpha) − w`.
    Translate {
        alpha: f64,
    },
    Samples(Vec<f64>),
}

impl Perturbation {
    pub fn sample(&self, profile: &WaveProfile, nodes: &[f64]) -> Result<Vec<f64>, WaveError> {
        Ok(match self {
            Perturbation::Zero => vec![0.0; nodes.len()],
            Perturbation::Gaussian { amplitude, center, width } => {
                if !(*width > 0.0) {
                    return Err(WaveError::InvalidParameter("Gaussian width must be positive".into()));
                }
                nodes.iter().map(|s| amplitude * (-((s - center) / width).powi(2)).exp()).collect()
            }
            Perturbation::Translate { alpha } => nodes.iter().map(|s| profile.w_at(s + alpha) - profile.w_at(*s)).collect(),
            Perturbation::Samples(v) => {
                if v.len() != nodes.len() {
                    return Err(WaveError::InvalidParameter(format!("perturbation has {} samples, grid has {}", v.len(), nodes.len())));
                }
                v.clone()
            }
        })
    }
}

/// `min_α ‖v − (w(· + α) − w)‖`: returns `(α̂, sup-norm residual at α̂)`.
/// The minimization is over the 2-norm, starting from the projection of `v`
/// onto `w'`.
pub fn translate_residual(profile: &WaveProfile, nodes: &[f64], v: &[f64]) -> (f64, f64) {
    let base: Vec<f64> = nodes.iter().map(|s| profile.w_at(*s)).collect();
    let wprime: Vec<f64> = nodes.iter().map(|s| profile.eval(*s).1).collect();
    let diff = |alpha: f64| -> Vec<f64> { nodes.iter().zip(&base).zip(v).map(|((s, w), x)| x - (profile.w_at(s + alpha) - w)).collect() };
    let cost = |alpha: f64| norm2(&diff(alpha));
    let guess = v.iter().zip(&wprime).map(|(a, b)| a * b).sum::<f64>() / wprime.iter().map(|b| b * b).sum::<f64>();
    let span = 0.5 + 0.5 * guess.abs();
    let steps = 40;
    let (mut best, mut best_cost) = (guess, cost(guess));
    for k in 0..=steps {
        let a = guess - span + 2.0 * span * k as f64 / steps as f64;
        let c = cost(a);
        if c < best_cost {
            best = a;
            best_cost = c;
        }
    }
    let cell = 2.0 * span / steps as f64;
    let (mut lo, mut hi) = (best - cell, best + cell);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (cost(x1), cost(x2));
    for _ in 0..80 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = cost(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = cost(x2);
        }
    }
    let alpha = 0.5 * (lo + hi);
    let alpha = if v.iter().all(|x| *x == 0.0) { 0.0 } else { alpha };
    (alpha, norm_inf(&diff(alpha)))
}

#[derive(Debug, Clone)]
pub struct WaveSimReport {
    /// `dist_series` holds the translate residual `(t, min_α ‖v(t) − E(α)‖∞)`.
    pub convergence: ConvergenceReport,
    pub alpha_hat: f64,
    pub final_residual: f64,
    /// Speed of the discrete wave used as the moving frame.
    pub v_discrete: f64,
    /// Smallest nonzero eigenvalue of the discrete linearization at the
    /// discrete wave.
    pub stable_margin: f64,
    pub rate_ratio: Option<f64>,
    pub times: Vec<f64>,
    /// `‖v(t)‖∞`.
    pub norms: Vec<f64>,
}

/// Settings for [`simulate_perturbation`].
#[derive(Debug, Clone, Copy)]
pub struct SimSettings {
    pub tol: f64,
    /// Sup-norm guard; exceeding it is reported as blow-up.
    pub guard: f64,
    /// Required final translate residual for convergence.
    pub eps_conv: f64,
    pub window: FitWindow,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self { tol: 1e-10, guard: 0.5, eps_conv: 1e-4, window: FitWindow::default() }
    }
}

pub fn simulate_perturbation(
    profile: &WaveProfile,
    v0: &Perturbation,
    t_max: f64,
    grid: SimGrid,
    settings: &SimSettings,
) -> Result<WaveSimReport, WaveError> {
    let dw = discrete_wave(profile, grid)?;
    let v_init = v0.sample(profile, &dw.nodes)?;
    let n = grid.n;
    let h = grid.h();

    let disc = Discretization { profile, h };
    let (c, q) = disc.linear_parts(&dw.u);
    let spectrum = wave_spectrum(&super::DiscreteLinearization {
        l: grid.l,
        h,
        grid: dw.nodes.clone(),
        matrix: assemble(&c, &q, dw.v, h),
        w_prime: dw.nodes.iter().map(|s| profile.eval(*s).1).collect(),
    })?;

    let prof = profile.clone();
    let base = dw.u.clone();
    let speed = dw.v;
    // the Newton residual left at the base state is subtracted so that v = 0
    // is an exact equilibrium
    let mut base_residual = vec![0.0; n];
    disc.residual(&base, speed, &mut base_residual);
    let field = VectorFieldSpec::new(
        "moving-frame",
        n,
        move |v, out| {
            let u: Vec<f64> = base.iter().zip(v).map(|(a, b)| a + b).collect();
            Discretization { profile: &prof, h }.residual(&u, speed, out);
            out.iter_mut().zip(&base_residual).for_each(|(o, r)| *o -= r);
        },
        vec![0.0; n],
        f64::INFINITY,
    );
    let guard = settings.guard;
    let opts = IntegrateOptions::new(settings.tol).uniform((t_max / OUTPUT_SAMPLES).max(1e-3)).stop_when(move |_, v| norm_inf(v) > guard);
    let traj = integrate_with(&field, &v_init, t_max, &opts)?;
    if traj.stop == StopReason::Predicate {
        return Err(WaveError::BlowUp(traj.last_time()));
    }

    let dist_series: Vec<(f64, f64)> =
        traj.times.iter().zip(&traj.states).map(|(t, v)| (*t, translate_residual(profile, &dw.nodes, v).1)).collect();
    let (alpha_hat, final_residual) = translate_residual(profile, &dw.nodes, traj.last_state());
    let norms: Vec<f64> = traj.states.iter().map(|v| norm_inf(v)).collect();

    let moved = traj.states.iter().map(|v| norm_inf(&v.iter().zip(&v_init).map(|(a, b)| a - b).collect::<Vec<_>>())).fold(0.0, f64::max);
    // local errors of size tol per component accumulate to about tol·√n in
    // the 2-norm used by the fit
    let w = &FitWindow { noise_floor: settings.window.noise_floor.max(10.0 * settings.tol * (n as f64).sqrt()), ..settings.window };
    let outcome = if moved <= w.noise_floor * (1.0 + norm_inf(&v_init)) {
        Outcome::Undetermined { reason: "trajectory is stationary; there is no decay to fit".into() }
    } else {
        match fit_exponential_tail(&traj, None, w) {
            None => Outcome::Undetermined { reason: format!("fewer than {} informative samples", w.min_samples) },
            Some(fit) if !(fit.rate > 0.0) => Outcome::Undetermined { reason: format!("fitted rate {:.3e} is not positive", fit.rate) },
            Some(fit) if fit.r2 < w.min_r2 => {
                Outcome::Undetermined { reason: format!("log-linear fit quality r2 = {:.4} below {}", fit.r2, w.min_r2) }
            }
            Some(fit) if fit.decay < 2.0 => {
                Outcome::Undetermined { reason: format!("deviation decays only by a factor {:.3} over the window", fit.decay) }
            }
            Some(_) if !(final_residual <= settings.eps_conv) => {
                Outcome::Undetermined { reason: format!("final translate residual {final_residual:.3e} above {:.1e}", settings.eps_conv) }
            }
            Some(fit) => Outcome::Converged { u_inf: fit.u_inf, rate: fit.rate, fit_r2: fit.r2 },
        }
    };
    let rate_ratio = match &outcome {
        Outcome::Converged { rate, .. } if spectrum.stable_margin > 0.0 => Some(rate / spectrum.stable_margin),
        _ => None,
    };
    Ok(WaveSimReport {
        convergence: ConvergenceReport { outcome, rho: guard, delta: norm_inf(&v_init), dist_series },
        alpha_hat,
        final_residual,
        v_discrete: dw.v,
        stable_margin: spectrum.stable_margin,
        rate_ratio,
        times: traj.times,
        norms,
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
    fn discrete_wave_is_close_to_the_profile() {
        let p = exact_profile();
        let dw = discrete_wave(&p, SimGrid::default()).unwrap();
        assert!(dw.residual < NEWTON_TOL);
        assert!((dw.v - p.v).abs() < 1e-3, "{} vs {}", dw.v, p.v);
        let dev = dw.nodes.iter().zip(&dw.u).map(|(s, u)| (u - p.w_at(*s)).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-3, "{dev}");
    }

    #[test]
    fn translate_residual_recovers_shift() {
        let p = exact_profile();
        let nodes = SimGrid::default().nodes();
        let v: Vec<f64> = nodes.iter().map(|s| p.w_at(s + 0.3) - p.w_at(*s)).collect();
        let (alpha, res) = translate_residual(&p, &nodes, &v);
        assert!((alpha - 0.3).abs() < 1e-7 && res < 1e-7, "{alpha} {res}");
        assert_eq!(translate_residual(&p, &nodes, &vec![0.0; nodes.len()]), (0.0, 0.0));
    }

    #[test]
    fn zero_perturbation_stays_zero() {
        let p = exact_profile();
        let rep = simulate_perturbation(&p, &Perturbation::Zero, 10.0, SimGrid::default(), &SimSettings::default()).unwrap();
        assert!(rep.norms.iter().all(|x| *x == 0.0));
        assert_eq!(rep.alpha_hat, 0.0);
    }

    #[test]
    fn translates_stay_translates() {
        let p = exact_profile();
        let rep =
            simulate_perturbation(&p, &Perturbation::Translate { alpha: 0.1 }, 20.0, SimGrid::default(), &SimSettings::default()).unwrap();
        let worst = rep.convergence.dist_series.iter().map(|x| x.1).fold(0.0, f64::max);
        assert!(worst < 1e-4, "{worst}");
        assert!((rep.alpha_hat - 0.1).abs() < 1e-3);
    }

    #[test]
    fn large_perturbation_is_guarded() {
        let p = exact_profile();
        let bump = Perturbation::Gaussian { amplitude: 2.0, center: 0.0, width: 1.0 };
        assert!(matches!(simulate_perturbation(&p, &bump, 1.0, SimGrid::default(), &SimSettings::default()), Err(WaveError::BlowUp(_))));
    }
}
