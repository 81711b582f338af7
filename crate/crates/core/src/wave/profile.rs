//! Wave profile assembled from the two saddle manifolds.

use super::{hermite, WaveError, WaveProblem, EPS_TAIL};
use crate::normal_form::VectorFieldSpec;
use crate::ode::{integrate_with, IntegrateOptions, StopReason};

const TAIL_AMPLITUDE: f64 = 1e-10;
const NODE_SPACING: f64 = 0.02;
const LEG_TOL: f64 = 1e-13;
const LEG_HORIZON: f64 = 500.0;

/// `s ↦ (w, z = w')` with `w(0) = 1/2`, stored on nodes and extended by the
/// linear saddle asymptotics beyond them.
#[derive(Debug, Clone)]
pub struct WaveProfile {
    pub problem: WaveProblem,
    pub v: f64,
    pub s: Vec<f64>,
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    dz: Vec<f64>,
    /// Growth rate of the left tail and (negative) decay rate of the right.
    pub lambda_left: f64,
    pub mu_right: f64,
    /// Mismatch of `z` at `w = 1/2` between the two manifolds.
    pub matching_gap: f64,
}

struct Leg {
    t: Vec<f64>,
    w: Vec<f64>,
    z: Vec<f64>,
}

fn leg(wp: &WaveProblem, v: f64, u0: [f64; 2], backward: bool) -> Result<Leg, WaveError> {
    let p = *wp;
    let sign = if backward { -1.0 } else { 1.0 };
    let fs = VectorFieldSpec::new(
        "wave-leg",
        2,
        move |u, out| {
            let (dw, dz) = p.phase_rhs(v, u[0], u[1]);
            out[0] = sign * dw;
            out[1] = sign * dz;
        },
        vec![0.5, 0.0],
        10.0,
    );
    let opts = IntegrateOptions::new(LEG_TOL).uniform(NODE_SPACING).stop_when(move |_, u| if backward { u[0] <= 0.4 } else { u[0] >= 0.6 });
    let traj = integrate_with(&fs, &u0, LEG_HORIZON, &opts)?;
    if traj.stop != StopReason::Predicate {
        return Err(WaveError::NotMonotone(0.0));
    }
    Ok(Leg { t: traj.times, w: traj.states.iter().map(|u| u[0]).collect(), z: traj.states.iter().map(|u| u[1]).collect() })
}

/// Time at which the Hermite interpolant of `w` crosses 1/2, with `z` there.
fn crossing(wp: &WaveProblem, v: f64, l: &Leg, sign: f64) -> Option<(f64, f64)> {
    let i = (0..l.w.len() - 1).find(|&i| (l.w[i] - 0.5) * (l.w[i + 1] - 0.5) <= 0.0)?;
    let h = l.t[i + 1] - l.t[i];
    let dw0 = sign * l.z[i];
    let dw1 = sign * l.z[i + 1];
    let dz0 = sign * wp.phase_rhs(v, l.w[i], l.z[i]).1;
    let dz1 = sign * wp.phase_rhs(v, l.w[i + 1], l.z[i + 1]).1;
    let g = |t: f64| hermite(t, h, l.w[i], l.w[i + 1], dw0, dw1) - 0.5;
    let (mut a, mut b) = (0.0, h);
    let ga = g(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (g(m) > 0.0) == (ga > 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    let t = 0.5 * (a + b);
    Some((l.t[i] + t, hermite(t, h, l.z[i], l.z[i + 1], dz0, dz1)))
}

impl WaveProfile {
    /// Integrates forward along the unstable manifold of `(0, 0)` and
    /// backward along the stable manifold of `(1, 0)`, both up to `w = 1/2`.
    pub fn build(wp: &WaveProblem, v: f64) -> Result<Self, WaveError> {
        let (l1, _) = wp.eigs_left(v);
        let (_, mu) = wp.eigs_right(v);
        let left = leg(wp, v, [TAIL_AMPLITUDE, l1 * TAIL_AMPLITUDE], false)?;
        let right = leg(wp, v, [1.0 - TAIL_AMPLITUDE, -mu * TAIL_AMPLITUDE], true)?;
        let (tl, zl) = crossing(wp, v, &left, 1.0).ok_or(WaveError::NotMonotone(0.0))?;
        let (tr, zr) = crossing(wp, v, &right, -1.0).ok_or(WaveError::NotMonotone(0.0))?;

        let mut nodes: Vec<(f64, f64, f64)> = Vec::with_capacity(left.t.len() + right.t.len() + 1);
        for i in 0..left.t.len() {
            let s = left.t[i] - tl;
            if s < -1e-12 {
                nodes.push((s, left.w[i], left.z[i]));
            }
        }
        nodes.push((0.0, 0.5, 0.5 * (zl + zr)));
        for i in (0..right.t.len()).rev() {
            let s = tr - right.t[i];
            if s > 1e-12 {
                nodes.push((s, right.w[i], right.z[i]));
            }
        }
        let s: Vec<f64> = nodes.iter().map(|n| n.0).collect();
        let w: Vec<f64> = nodes.iter().map(|n| n.1).collect();
        let z: Vec<f64> = nodes.iter().map(|n| n.2).collect();
        let dz = w.iter().zip(&z).map(|(w, z)| wp.phase_rhs(v, *w, *z).1).collect();
        if let Some(i) = z.iter().position(|z| !(*z > 0.0)) {
            return Err(WaveError::NotMonotone(s[i]));
        }
        Ok(Self { problem: *wp, v, s, w, z, dz, lambda_left: l1, mu_right: mu, matching_gap: (zl - zr).abs() })
    }

    /// `(w(s), w'(s))`.
    pub fn eval(&self, s: f64) -> (f64, f64) {
        let n = self.s.len();
        if s <= self.s[0] {
            let e = (self.lambda_left * (s - self.s[0])).exp();
            return (self.w[0] * e, self.z[0] * e);
        }
        if s >= self.s[n - 1] {
            let e = (self.mu_right * (s - self.s[n - 1])).exp();
            return (1.0 - (1.0 - self.w[n - 1]) * e, self.z[n - 1] * e);
        }
        let i = self.s.partition_point(|x| *x <= s) - 1;
        let h = self.s[i + 1] - self.s[i];
        let t = s - self.s[i];
        (
            hermite(t, h, self.w[i], self.w[i + 1], self.z[i], self.z[i + 1]),
            hermite(t, h, self.z[i], self.z[i + 1], self.dz[i], self.dz[i + 1]),
        )
    }

    pub fn w_at(&self, s: f64) -> f64 {
        self.eval(s).0
    }

    /// `max(w(−L), 1 − w(L), |z(±L)|)`.
    pub fn tail(&self, l: f64) -> f64 {
        let (wl, zl) = self.eval(-l);
        let (wr, zr) = self.eval(l);
        wl.abs().max((1.0 - wr).abs()).max(zl.abs()).max(zr.abs())
    }

    /// Monotonicity on the nodes and tails below `eps_tail` at `±L`.
    pub fn check(&self, l: f64, eps_tail: f64) -> Result<(), WaveError> {
        if let Some(i) = self.z.iter().position(|z| !(*z > 0.0)) {
            return Err(WaveError::NotMonotone(self.s[i]));
        }
        let tail = self.tail(l);
        if tail > eps_tail {
            return Err(WaveError::TailsTooFat { l, eps_tail, tail });
        }
        Ok(())
    }

    /// Smallest `L` with tails below [`EPS_TAIL`].
    pub fn truncation_length(&self) -> f64 {
        let mut l = 1.0;
        while self.tail(l) > EPS_TAIL && l < 1e4 {
            l *= 1.05;
        }
        l
    }

    /// `V∫z² ds` over the whole line, which equals the jump `F(1) − F(0)` of
    /// `G + F` between the saddles.
    pub fn dissipation(&self) -> f64 {
        let n = self.s.len();
        let mut total = 0.0;
        for i in 0..n - 1 {
            let h = self.s[i + 1] - self.s[i];
            total += super::GL4
                .iter()
                .map(|(x, wt)| {
                    let t = 0.5 * h * (1.0 + x);
                    let z = hermite(t, h, self.z[i], self.z[i + 1], self.dz[i], self.dz[i + 1]);
                    0.5 * h * wt * z * z
                })
                .sum::<f64>();
        }
        // exponential tails: ∫ z0² e^{2λ(s−s0)}
        total += self.z[0].powi(2) / (2.0 * self.lambda_left);
        total += self.z[n - 1].powi(2) / (-2.0 * self.mu_right);
        self.v * total
    }
}

#[cfg(test)]
mod tests {
    use super::super::{find_speed, Sigma};
    use super::*;

    fn closed_form(s: f64) -> (f64, f64) {
        let w = 1.0 / (1.0 + (-s / 2f64.sqrt()).exp());
        (w, w * (1.0 - w) / 2f64.sqrt())
    }

    #[test]
    fn matches_closed_form_at_exact_speed() {
        let wp = WaveProblem::new(0.25, Sigma::Identity).unwrap();
        let v = 0.5 / 2f64.sqrt();
        let p = WaveProfile::build(&wp, v).unwrap();
        assert!(p.matching_gap < 1e-9, "{}", p.matching_gap);
        for k in 0..161 {
            let s = -40.0 + 0.5 * k as f64;
            let (w, z) = p.eval(s);
            let (we, ze) = closed_form(s);
            assert!((w - we).abs() < 1e-9 && (z - ze).abs() < 1e-9, "s = {s}: {w} vs {we}");
        }
        assert!((p.dissipation() - wp.big_f(1.0)).abs() < 1e-8);
        p.check(40.0, EPS_TAIL).unwrap();
        assert!(matches!(p.check(10.0, EPS_TAIL), Err(WaveError::TailsTooFat { .. })));
        assert!(p.truncation_length() < 40.0);
    }

    #[test]
    fn found_profile_is_monotone_and_balanced() {
        let wp = WaveProblem::new(0.25, Sigma::Tanh { eps: 0.1 }).unwrap();
        let sol = find_speed(&wp, (0.0, 2.0), 1e-10).unwrap();
        assert!(sol.v_star > 0.0);
        let p = &sol.profile;
        assert!(p.z.iter().all(|z| *z > 0.0));
        assert!(p.matching_gap < 1e-6);
        assert!((p.w_at(0.0) - 0.5).abs() < 1e-15);
        assert!((p.dissipation() - wp.big_f(1.0)).abs() < 1e-6);
    }
}
