//! Adaptive Simpson quadrature.

const MAX_DEPTH: u32 = 50;

/// `∫_a^b f` to absolute tolerance `tol` by adaptive Simpson with
/// Richardson correction.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    recurse(&f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_and_transcendentals() {
        assert!((integrate(|x| x * x * x, 0.0, 2.0, 1e-12) - 4.0).abs() < 1e-12);
        assert!((integrate(f64::sin, 0.0, std::f64::consts::PI, 1e-12) - 2.0).abs() < 1e-11);
        assert!((integrate(|x| (-x * x).exp(), -6.0, 6.0, 1e-12) - std::f64::consts::PI.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let f = |x: f64| x.cosh();
        assert!((integrate(f, 1.0, 0.0, 1e-12) + integrate(f, 0.0, 1.0, 1e-12)).abs() < 1e-13);
        assert_eq!(integrate(f, 0.3, 0.3, 1e-12), 0.0);
    }
}
