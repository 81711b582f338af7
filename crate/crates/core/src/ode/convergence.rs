use nalgebra::DMatrix;
use thiserror::Error;

use super::{integrate_with, IntegrateOptions, OdeError, Trajectory};
use crate::linalg::{norm2, to_dvector};
use crate::normal_form::{ManifoldChart, VectorFieldSpec};
use crate::spectral::{eigen_decompose, SpectralSplit, SquareMatrix};

const GRID_PER_DIM: usize = 64;
const GAUSS_NEWTON_ITERS: usize = 40;
/// Log-spaced trial rates for the separable exponential fit.
const RATE_SCAN: (f64, f64, usize) = (1e-4, 1e3, 71);
const GOLDEN_ITERS: usize = 80;

/// Distance from a state to the chart image.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldDistance {
    pub dist: f64,
    pub zeta: Vec<f64>,
    /// False when the local refinement failed and the grid minimum is
    /// returned instead.
    pub refined: bool,
}

fn sq_dist(chart: &ManifoldChart, u: &[f64], z: &[f64]) -> f64 {
    chart.eval(z).iter().zip(u).map(|(a, b)| (a - b).powi(2)).sum()
}

/// Grid search over the chart domain followed by Gauss–Newton on
/// `ζ ↦ |u − Ψ(ζ)|²`.
pub fn dist_to_manifold(u: &[f64], chart: &ManifoldChart) -> ManifoldDistance {
    let m = chart.dim();
    let grid = chart.sample_parameters(GRID_PER_DIM, 1.0);
    let (mut z, mut best) = grid
        .into_iter()
        .map(|z| {
            let d = sq_dist(chart, u, &z);
            (z, d)
        })
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .expect("grid is nonempty");
    if m == 0 {
        return ManifoldDistance { dist: best.sqrt(), zeta: z, refined: true };
    }
    let grid_min = (z.clone(), best);
    let mut refined = true;
    for _ in 0..GAUSS_NEWTON_ITERS {
        let j = chart.derivative(&z);
        let r = to_dvector(&chart.eval(&z)) - to_dvector(u);
        let jtj = j.transpose() * &j;
        let Some(step) = jtj.lu().solve(&(j.transpose() * r)) else {
            refined = false;
            break;
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
            let d = sq_dist(chart, u, &trial);
            if d <= best {
                z = trial;
                best = d;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved || step.norm() * t < 1e-15 * (1.0 + norm2(&z)) {
            break;
        }
    }
    if !best.is_finite() || best > grid_min.1 {
        refined = false;
        z = grid_min.0;
        best = grid_min.1;
    }
    ManifoldDistance { dist: best.sqrt(), zeta: z, refined }
}

/// Parameters of the tail fit used by [`assess_convergence`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitWindow {
    /// Fraction of the (non-saturated) samples used for the fit.
    pub fraction: f64,
    pub min_samples: usize,
    /// Deviations below `noise_floor·(1 + |u_∞|)` are treated as converged
    /// to round-off and excluded.
    pub noise_floor: f64,
    pub min_r2: f64,
    /// Equilibrium residual bound for the limit point.
    pub eps_eq: f64,
}

impl Default for FitWindow {
    fn default() -> Self {
        Self { fraction: 0.3, min_samples: 20, noise_floor: 1e-11, min_r2: 0.98, eps_eq: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Converged { u_inf: Vec<f64>, rate: f64, fit_r2: f64 },
    LeftNeighborhood { t0: f64 },
    Undetermined { reason: String },
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Converged { .. } => "Converged",
            Outcome::LeftNeighborhood { .. } => "LeftNeighborhood",
            Outcome::Undetermined { .. } => "Undetermined",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub outcome: Outcome,
    pub rho: f64,
    /// Distance of the initial state from the base point of the chart.
    pub delta: f64,
    /// `(t, dist(u(t), E))` for every trajectory sample.
    pub dist_series: Vec<(f64, f64)>,
}

/// Result of fitting `u(t) ≈ u_∞ + d·e^{−ωt}` to a trajectory tail.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentialFit {
    pub u_inf: Vec<f64>,
    /// Slope of `−log|u(t) − u_∞|` over the window.
    pub rate: f64,
    pub r2: f64,
    /// Indices of the samples that entered the log-linear fit.
    pub window: (usize, usize),
    /// Ratio of the first to the last deviation inside the window.
    pub decay: f64,
}

/// Separable least squares: for fixed `ω` the best `u_∞` and `d` are linear.
/// With `relative` set, residuals are weighted by `e^{2ω(t − t0)}` so the
/// late samples pin down `u_∞` and small nonlinear corrections early in the
/// window do not bias it.
fn separable_sse(times: &[f64], states: &[&[f64]], omega: f64, relative: bool) -> (f64, Vec<f64>) {
    let t0 = times[0];
    let e: Vec<f64> = times.iter().map(|t| (-omega * (t - t0)).exp()).collect();
    let w: Vec<f64> = if relative { e.iter().map(|x| (1.0 / (x * x)).min(1e30)).collect() } else { vec![1.0; e.len()] };
    let sw: f64 = w.iter().sum();
    let swe: f64 = w.iter().zip(&e).map(|(a, b)| a * b).sum();
    let swee: f64 = w.iter().zip(&e).map(|(a, b)| a * b * b).sum();
    let det = sw * swee - swe * swe;
    let n = states[0].len();
    let mut sse = 0.0;
    let mut u_inf = vec![0.0; n];
    for i in 0..n {
        let swy: f64 = states.iter().zip(&w).map(|(u, a)| a * u[i]).sum();
        let swey: f64 = states.iter().zip(w.iter().zip(&e)).map(|(u, (a, b))| a * b * u[i]).sum();
        let (c, d) =
            if det.abs() > 1e-300 * sw * swee { ((swee * swy - swe * swey) / det, (sw * swey - swe * swy) / det) } else { (swy / sw, 0.0) };
        u_inf[i] = c;
        sse += states.iter().zip(w.iter().zip(&e)).map(|(u, (a, x))| a * (u[i] - c - d * x).powi(2)).sum::<f64>();
    }
    (sse / sw, u_inf)
}

fn best_rate(times: &[f64], states: &[&[f64]]) -> Vec<f64> {
    let (lo, hi, count) = RATE_SCAN;
    let (llo, lhi) = (lo.ln(), hi.ln());
    let grid: Vec<f64> = (0..count).map(|i| llo + (lhi - llo) * i as f64 / (count - 1) as f64).collect();
    let f = |lw: f64| separable_sse(times, states, lw.exp(), false).0;
    let vals: Vec<f64> = grid.iter().map(|g| f(*g)).collect();
    let ib = (0..count).min_by(|a, b| vals[*a].partial_cmp(&vals[*b]).unwrap()).unwrap();
    let (mut a, mut b) = (grid[ib.saturating_sub(1)], grid[(ib + 1).min(count - 1)]);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..GOLDEN_ITERS {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    separable_sse(times, states, (0.5 * (a + b)).exp(), true).1
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 0.0 };
    (slope, my - slope * mx, r2)
}

/// One minimum-norm Gauss–Newton step towards `F = 0`.
fn refine_on_equilibria(fs: &VectorFieldSpec, u: &[f64]) -> Vec<f64> {
    let f = to_dvector(&fs.eval(u));
    let j = fs.jacobian(u);
    let svd = j.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    match svd.solve(&f, 1e-8 * smax.max(1e-300)) {
        Ok(step) => u.iter().zip(step.iter()).map(|(a, s)| a - s).collect(),
        Err(_) => u.to_vec(),
    }
}

/// Fits the exponential tail of a trajectory.
///
/// The window is the last `fraction` of the samples that are still above
/// the noise floor, so trajectories that have converged to round-off well
/// before the end do not dilute the fit.
pub fn fit_exponential_tail(traj: &Trajectory, fs: Option<&VectorFieldSpec>, w: &FitWindow) -> Option<ExponentialFit> {
    let total = traj.len();
    if total < w.min_samples {
        return None;
    }
    let mut active = total;
    let mut fit = None;
    for _ in 0..3 {
        let len = ((w.fraction * active as f64).ceil() as usize).max(w.min_samples);
        if len > active {
            return None;
        }
        let start = active - len;
        let times = &traj.times[start..active];
        let states: Vec<&[f64]> = traj.states[start..active].iter().map(|s| s.as_slice()).collect();
        let mut u_inf = best_rate(times, &states);
        if let Some(fs) = fs {
            u_inf = refine_on_equilibria(fs, &u_inf);
        }
        let floor = w.noise_floor * (1.0 + norm2(&u_inf));
        let dev: Vec<f64> = traj.states.iter().map(|u| norm2(&u.iter().zip(&u_inf).map(|(a, b)| a - b).collect::<Vec<_>>())).collect();
        let new_active = dev.iter().position(|d| *d <= floor).unwrap_or(total);
        fit = Some((u_inf, start, active, dev));
        if new_active >= active {
            break;
        }
        active = new_active;
    }
    let (u_inf, start, end, dev) = fit?;
    let x: Vec<f64> = traj.times[start..end].to_vec();
    let y: Vec<f64> = dev[start..end].iter().map(|d| d.max(1e-300).ln()).collect();
    if x.len() < w.min_samples || x.last() <= x.first() {
        return None;
    }
    let (slope, _, r2) = linear_fit(&x, &y);
    Some(ExponentialFit { u_inf, rate: -slope, r2, window: (start, end), decay: dev[start] / dev[end - 1].max(1e-300) })
}

/// Classifies a trajectory as converging, leaving the `rho`-neighborhood of
/// the equilibrium manifold, or neither.
pub fn assess_convergence(
    traj: &Trajectory,
    fs: &VectorFieldSpec,
    chart: &ManifoldChart,
    rho: f64,
    window: &FitWindow,
) -> ConvergenceReport {
    let base = chart.base_point();
    let delta = traj.states.first().map(|u| norm2(&u.iter().zip(&base).map(|(a, b)| a - b).collect::<Vec<_>>())).unwrap_or(0.0);
    let dist_series: Vec<(f64, f64)> = traj.times.iter().zip(&traj.states).map(|(t, u)| (*t, dist_to_manifold(u, chart).dist)).collect();
    let report = |outcome| ConvergenceReport { outcome, rho, delta, dist_series: dist_series.clone() };
    if let Some((t0, _)) = dist_series.iter().find(|(_, d)| *d > rho) {
        return report(Outcome::LeftNeighborhood { t0: *t0 });
    }
    let Some(fit) = fit_exponential_tail(traj, Some(fs), window) else {
        return report(Outcome::Undetermined { reason: format!("fewer than {} informative samples", window.min_samples) });
    };
    let residual = norm2(&fs.eval(&fit.u_inf));
    let outcome = if !(fit.rate > 0.0) {
        Outcome::Undetermined { reason: format!("fitted rate {:.3e} is not positive", fit.rate) }
    } else if fit.r2 < window.min_r2 {
        Outcome::Undetermined { reason: format!("log-linear fit quality r2 = {:.4} below {}", fit.r2, window.min_r2) }
    } else if fit.decay < 2.0 {
        Outcome::Undetermined { reason: format!("deviation decays only by a factor {:.3} over the window", fit.decay) }
    } else if !(residual <= window.eps_eq) {
        Outcome::Undetermined { reason: format!("limit point is not an equilibrium: |F(u_inf)| = {residual:.3e}") }
    } else {
        Outcome::Converged { u_inf: fit.u_inf, rate: fit.rate, fit_r2: fit.r2 }
    };
    report(outcome)
}

/// Integrates from `u0`, stopping as soon as the state is farther than
/// `rho` from the manifold, and assesses the result. A trajectory that
/// leaves the field's domain is assessed up to the exit.
pub fn simulate_and_assess(
    fs: &VectorFieldSpec,
    chart: &ManifoldChart,
    u0: &[f64],
    t_max: f64,
    rho: f64,
    opts: &IntegrateOptions,
    window: &FitWindow,
) -> Result<(Trajectory, ConvergenceReport), OdeError> {
    let c = chart.clone();
    let opts = opts.clone().stop_when(move |_, u| dist_to_manifold(u, &c).dist > rho);
    let traj = match integrate_with(fs, u0, t_max, &opts) {
        Ok(t) => t,
        Err(OdeError::DomainExit { partial, .. }) => *partial,
        Err(e) => return Err(e),
    };
    // deviations below the integrator's own error level carry no rate
    let window = FitWindow { noise_floor: window.noise_floor.max(10.0 * opts.tol), ..*window };
    let report = assess_convergence(&traj, fs, chart, rho, &window);
    Ok((traj, report))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("trajectory did not converge")]
    NotConverged,
    #[error("the linearization has no stable part")]
    NoStablePart,
}

/// `ω̂ / min Re σ(A_s)`.
pub fn estimate_rate_vs_gap(report: &ConvergenceReport, split: &SpectralSplit) -> Result<f64, RateError> {
    let Outcome::Converged { rate, .. } = report.outcome else {
        return Err(RateError::NotConverged);
    };
    if split.dims.1 == 0 {
        return Err(RateError::NoStablePart);
    }
    let a_s: DMatrix<f64> = split.as_.clone();
    let sm = SquareMatrix::new(a_s).map_err(|_| RateError::NoStablePart)?;
    let rep = eigen_decompose(&sm, 0.0, f64::MIN_POSITIVE).map_err(|_| RateError::NoStablePart)?;
    let gap = rep.eigenvalues.iter().map(|l| l.re).fold(f64::INFINITY, f64::min);
    Ok(rate / gap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(rate: f64, t_end: f64, samples: usize) -> Trajectory {
        let times: Vec<f64> = (0..samples).map(|i| t_end * i as f64 / (samples - 1) as f64).collect();
        let states = times
            .iter()
            .map(|t| {
                let e = (-rate * t).exp();
                vec![0.6 + 0.3 * e, 0.8 - 0.2 * e]
            })
            .collect();
        Trajectory { times, states, stats: Default::default(), stop: super::super::StopReason::ReachedEnd }
    }

    #[test]
    fn synthetic_rate_recovered() {
        let fit = fit_exponential_tail(&synthetic(2.0, 8.0, 200), None, &FitWindow::default()).unwrap();
        assert!((fit.rate - 2.0).abs() < 0.1, "{fit:?}");
        assert!((fit.u_inf[0] - 0.6).abs() < 1e-9 && (fit.u_inf[1] - 0.8).abs() < 1e-9);
        assert!(fit.r2 > 0.999);
    }

    #[test]
    fn saturated_tail_is_excluded() {
        // converges to round-off long before the end
        let fit = fit_exponential_tail(&synthetic(3.0, 40.0, 400), None, &FitWindow::default()).unwrap();
        assert!((fit.rate - 3.0).abs() < 0.15, "{fit:?}");
    }

    #[test]
    fn distance_to_circle() {
        let c = ManifoldChart::unit_circle(2);
        let d = dist_to_manifold(&[0.0, 1.1], &c);
        assert!((d.dist - 0.1).abs() < 1e-12 && d.refined);
        for z in [-2.5, -0.3, 0.0, 1.7, 3.0] {
            let p = c.eval(&[z]);
            assert!(dist_to_manifold(&p, &c).dist < 1e-9);
        }
    }

    #[test]
    fn distance_matches_dense_sampling() {
        use rand::{Rng, SeedableRng};
        let c = ManifoldChart::unit_circle(2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let u = [rng.gen_range(-1.3..1.3), rng.gen_range(-1.3..1.3)];
            if norm2(&u) < 0.3 {
                continue;
            }
            let brute = (0..1_000_000)
                .map(|i| {
                    let t = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / 1e6;
                    ((u[0] - t.sin()).powi(2) + (u[1] - t.cos()).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((dist_to_manifold(&u, &c).dist - brute).abs() < 1e-5);
        }
    }
}
