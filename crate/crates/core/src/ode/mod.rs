//! Adaptive Dormand–Prince 5(4) integration and convergence diagnostics.

mod convergence;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::normal_form::VectorFieldSpec;

pub use convergence::{
    assess_convergence, dist_to_manifold, estimate_rate_vs_gap, fit_exponential_tail, simulate_and_assess, ConvergenceReport,
    ExponentialFit, FitWindow, ManifoldDistance, Outcome, RateError,
};

const MAX_STEPS_DEFAULT: usize = 2_000_000;
const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

// Dormand–Prince coefficients
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// continuous extension
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Error, Clone)]
pub enum OdeError {
    #[error("step size underflow at t = {t:.6e} (h = {h:.3e})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("state left the domain of the field at t = {t:.6e}")]
    DomainExit { t: f64, partial: Box<Trajectory> },
    #[error("step budget of {0} exhausted")]
    StepBudget(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Which states are recorded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Output {
    /// Every accepted step.
    AllSteps,
    /// Samples at `t = k·dt` from the continuous extension, plus the
    /// final time.
    Uniform(f64),
}

pub type StopFn = dyn Fn(f64, &[f64]) -> bool + Send + Sync;

#[derive(Clone)]
pub struct IntegrateOptions {
    /// Relative and absolute tolerance of the local error test.
    pub tol: f64,
    pub output: Output,
    pub max_steps: usize,
    pub max_step: f64,
    /// Checked after every accepted step; integration ends when it fires.
    pub stop: Option<Arc<StopFn>>,
}

impl fmt::Debug for IntegrateOptions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IntegrateOptions")
            .field("tol", &self.tol)
            .field("output", &self.output)
            .field("max_steps", &self.max_steps)
            .field("max_step", &self.max_step)
            .field("stop", &self.stop.is_some())
            .finish()
    }
}

impl IntegrateOptions {
    pub fn new(tol: f64) -> Self {
        Self { tol, output: Output::AllSteps, max_steps: MAX_STEPS_DEFAULT, max_step: f64::INFINITY, stop: None }
    }

    pub fn uniform(mut self, dt: f64) -> Self {
        self.output = Output::Uniform(dt);
        self
    }

    pub fn max_step(mut self, h: f64) -> Self {
        self.max_step = h;
        self
    }

    pub fn stop_when(mut self, f: impl Fn(f64, &[f64]) -> bool + Send + Sync + 'static) -> Self {
        self.stop = Some(Arc::new(f));
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    /// Largest normalized local error estimate among accepted steps (≤ 1).
    pub max_error_estimate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    ReachedEnd,
    Predicate,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: StepStats,
    pub stop: StopReason,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> &[f64] {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("trajectory is never empty")
    }

    /// A constant trajectory at `u`, sampled at the given times.
    pub fn constant(u: &[f64], times: Vec<f64>) -> Self {
        let states = vec![u.to_vec(); times.len()];
        Self { times, states, stats: StepStats::default(), stop: StopReason::ReachedEnd }
    }

    /// Keeps the samples before the first one for which `pred` holds.
    pub fn truncated_before(&self, pred: impl Fn(f64, &[f64]) -> bool) -> Self {
        let k = self.times.iter().zip(&self.states).position(|(t, u)| pred(*t, u)).unwrap_or(self.len());
        Self { times: self.times[..k].to_vec(), states: self.states[..k].to_vec(), stats: self.stats, stop: self.stop }
    }
}

/// Integrates `u̇ = F(u)` on `[0, t_max]` recording every accepted step.
pub fn integrate(fs: &VectorFieldSpec, u0: &[f64], t_max: f64, tol: f64) -> Result<Trajectory, OdeError> {
    integrate_with(fs, u0, t_max, &IntegrateOptions::new(tol))
}

fn error_norm(y: &[f64], ynew: &[f64], err: &[f64], tol: f64) -> f64 {
    let n = y.len();
    let s: f64 = (0..n)
        .map(|i| {
            let sc = tol + tol * y[i].abs().max(ynew[i].abs());
            (err[i] / sc).powi(2)
        })
        .sum();
    (s / n as f64).sqrt()
}

fn initial_step(fs: &VectorFieldSpec, y: &[f64], f0: &[f64], tol: f64) -> f64 {
    let n = y.len() as f64;
    let sc: Vec<f64> = y.iter().map(|v| tol + tol * v.abs()).collect();
    let d0 = (y.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let f1 = fs.eval(&y1);
    let d2 = (f1.iter().zip(f0).zip(&sc).map(|((a, b), s)| ((a - b) / s).powi(2)).sum::<f64>() / n).sqrt() / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
    (100.0 * h0).min(h1)
}

/// Integrates `u̇ = F(u)` on `[0, t_max]` with an embedded 5(4) pair and
/// FSAL stage reuse.
pub fn integrate_with(fs: &VectorFieldSpec, u0: &[f64], t_max: f64, opts: &IntegrateOptions) -> Result<Trajectory, OdeError> {
    let n = fs.dim();
    if u0.len() != n {
        return Err(OdeError::InvalidInput(format!("initial state has length {}, expected {n}", u0.len())));
    }
    if !(opts.tol > 0.0) || !(t_max >= 0.0) {
        return Err(OdeError::InvalidInput("tolerance must be positive and t_max nonnegative".into()));
    }
    if let Output::Uniform(dt) = opts.output {
        if !(dt > 0.0) {
            return Err(OdeError::InvalidInput("output spacing must be positive".into()));
        }
    }
    if !fs.in_domain(u0) {
        return Err(OdeError::InvalidInput("initial state outside the domain of the field".into()));
    }

    let mut traj = Trajectory { times: vec![0.0], states: vec![u0.to_vec()], stats: StepStats::default(), stop: StopReason::ReachedEnd };
    if t_max == 0.0 {
        return Ok(traj);
    }
    let mut next_out = 1usize;

    let mut t = 0.0;
    let mut y = u0.to_vec();
    let mut k1 = fs.eval(&y);
    let mut h = initial_step(fs, &y, &k1, opts.tol).min(opts.max_step).min(t_max);
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut ys = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut err = vec![0.0; n];

    loop {
        if traj.stats.accepted + traj.stats.rejected >= opts.max_steps {
            return Err(OdeError::StepBudget(opts.max_steps));
        }
        let last = t + h >= t_max;
        if last {
            h = t_max - t;
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(OdeError::StepSizeUnderflow { t, h });
        }
        for i in 0..n {
            ys[i] = y[i] + h * A21 * k1[i];
        }
        fs.eval_into(&ys, &mut k2);
        for i in 0..n {
            ys[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        fs.eval_into(&ys, &mut k3);
        for i in 0..n {
            ys[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        fs.eval_into(&ys, &mut k4);
        for i in 0..n {
            ys[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        fs.eval_into(&ys, &mut k5);
        for i in 0..n {
            ys[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        fs.eval_into(&ys, &mut k6);
        for i in 0..n {
            ynew[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        fs.eval_into(&ynew, &mut k7);
        for i in 0..n {
            err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let en = error_norm(&y, &ynew, &err, opts.tol);
        if !en.is_finite() {
            traj.stats.rejected += 1;
            h *= MIN_FACTOR;
            continue;
        }
        if en > 1.0 {
            traj.stats.rejected += 1;
            h *= (SAFETY * en.powf(-0.2)).max(MIN_FACTOR);
            continue;
        }

        // accepted
        let t_new = if last { t_max } else { t + h };
        if !fs.in_domain(&ynew) {
            return Err(OdeError::DomainExit { t: t_new, partial: Box::new(traj) });
        }
        traj.stats.accepted += 1;
        traj.stats.max_error_estimate = traj.stats.max_error_estimate.max(en);

        match opts.output {
            Output::AllSteps => {
                traj.times.push(t_new);
                traj.states.push(ynew.clone());
            }
            Output::Uniform(dt) => {
                let mut t_out = next_out as f64 * dt;
                if t_out <= t_new {
                    let r5: Vec<f64> =
                        (0..n).map(|i| h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i])).collect();
                    while t_out <= t_new && t_out < t_max {
                        let th = (t_out - t) / h;
                        let th1 = 1.0 - th;
                        let u: Vec<f64> = (0..n)
                            .map(|i| {
                                let ydiff = ynew[i] - y[i];
                                let bspl = h * k1[i] - ydiff;
                                let r4 = ydiff - h * k7[i] - bspl;
                                y[i] + th * (ydiff + th1 * (bspl + th * (r4 + th1 * r5[i])))
                            })
                            .collect();
                        traj.times.push(t_out);
                        traj.states.push(u);
                        next_out += 1;
                        t_out = next_out as f64 * dt;
                    }
                }
            }
        }

        let fire = opts.stop.as_ref().map(|s| s(t_new, &ynew)).unwrap_or(false);
        if last || fire {
            if traj.last_time() < t_new {
                traj.times.push(t_new);
                traj.states.push(ynew.clone());
            }
            if fire {
                traj.stop = StopReason::Predicate;
            }
            return Ok(traj);
        }

        t = t_new;
        std::mem::swap(&mut y, &mut ynew);
        std::mem::swap(&mut k1, &mut k7);
        let factor = if en == 0.0 { MAX_FACTOR } else { (SAFETY * en.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR) };
        h = (h * factor).min(opts.max_step);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay() -> VectorFieldSpec {
        VectorFieldSpec::new("decay", 1, |u, out| out[0] = -u[0], vec![0.0], 10.0)
    }

    fn oscillator() -> VectorFieldSpec {
        VectorFieldSpec::new(
            "oscillator",
            2,
            |u, out| {
                out[0] = u[1];
                out[1] = -u[0];
            },
            vec![0.0; 2],
            10.0,
        )
    }

    #[test]
    fn scalar_decay() {
        let tr = integrate(&decay(), &[1.0], 1.0, 1e-10).unwrap();
        assert!((tr.last_state()[0] - (-1.0f64).exp()).abs() < 1e-8);
        assert_eq!(tr.last_time(), 1.0);
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        assert!(tr.stats.max_error_estimate <= 1.0);
    }

    #[test]
    fn oscillator_energy_drift() {
        let tr = integrate(&oscillator(), &[1.0, 0.0], 100.0, 1e-10).unwrap();
        let drift = tr.states.iter().map(|u| (0.5 * (u[0] * u[0] + u[1] * u[1]) - 0.5).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-6, "drift {drift}");
    }

    #[test]
    fn error_shrinks_with_tolerance() {
        // for a fifth-order method, error ∝ tol roughly; check the trend
        let errs: Vec<f64> = [1e-6, 1e-8, 1e-10]
            .iter()
            .map(|tol| (integrate(&decay(), &[1.0], 5.0, *tol).unwrap().last_state()[0] - (-5.0f64).exp()).abs())
            .collect();
        assert!(errs[1] < errs[0] / 10.0 && errs[2] < errs[1] / 10.0, "{errs:?}");
    }

    #[test]
    fn uniform_output_uses_dense_extension() {
        let opts = IntegrateOptions::new(1e-10).uniform(0.1);
        let tr = integrate_with(&oscillator(), &[1.0, 0.0], 10.0, &opts).unwrap();
        assert_eq!(tr.len(), 101);
        for (t, u) in tr.times.iter().zip(&tr.states) {
            assert!((u[0] - t.cos()).abs() < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn zero_horizon_and_bad_input() {
        let tr = integrate(&decay(), &[1.0], 0.0, 1e-8).unwrap();
        assert_eq!(tr.len(), 1);
        assert!(matches!(integrate(&decay(), &[1.0, 2.0], 1.0, 1e-8), Err(OdeError::InvalidInput(_))));
        assert!(matches!(integrate(&decay(), &[1.0], 1.0, 0.0), Err(OdeError::InvalidInput(_))));
    }

    #[test]
    fn blow_up_leaves_domain() {
        let fs = VectorFieldSpec::new("blowup", 1, |u, out| out[0] = u[0] * u[0], vec![0.0], 100.0);
        match integrate(&fs, &[1.0], 2.0, 1e-8) {
            Err(OdeError::DomainExit { t, partial }) => {
                assert!(t < 1.0 + 1e-6);
                assert!(partial.len() > 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stop_predicate_ends_early() {
        let opts = IntegrateOptions::new(1e-8).stop_when(|_, u| u[0] < 0.5);
        let tr = integrate_with(&decay(), &[1.0], 10.0, &opts).unwrap();
        assert_eq!(tr.stop, StopReason::Predicate);
        assert!(tr.last_state()[0] < 0.5 && tr.last_time() < 1.0);
    }

    #[test]
    fn deterministic() {
        let a = integrate(&oscillator(), &[0.3, 0.1], 7.0, 1e-9).unwrap();
        let b = integrate(&oscillator(), &[0.3, 0.1], 7.0, 1e-9).unwrap();
        assert_eq!(a.times, b.times);
        assert_eq!(a.states, b.states);
    }
}
