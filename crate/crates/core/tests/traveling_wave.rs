use normstab::ode::Outcome;
use normstab::wave::*;

fn exact_speed(a: f64) -> f64 {
    (1.0 - 2.0 * a) / 2f64.sqrt()
}

#[test]
fn bisection_recovers_closed_form_speeds() {
    for a in [0.1, 0.25, 0.4] {
        let wp = WaveProblem::new(a, Sigma::Identity).unwrap();
        let sol = find_speed(&wp, (0.0, 2.0), 1e-10).unwrap();
        assert!((sol.v_star - exact_speed(a)).abs() < 1e-4, "a = {a}: {}", sol.v_star);
        sol.profile.check(40.0, EPS_TAIL).unwrap();
        let r = shoot(&wp, sol.v_star, &ShootOptions::default()).unwrap();
        assert_eq!(r.outcome, ShootOutcome::Connected);
    }
}

#[test]
fn speeds_are_positive() {
    for a in [0.1, 0.2, 0.3, 0.4] {
        let wp = WaveProblem::new(a, Sigma::Identity).unwrap();
        assert!(find_speed(&wp, (0.0, 2.0), 1e-8).unwrap().v_star > 0.0);
    }
}

#[test]
fn bracket_is_widened_and_validated() {
    let wp = WaveProblem::new(0.1, Sigma::Identity).unwrap();
    let sol = find_speed(&wp, (0.0, 0.1), 1e-8).unwrap();
    assert!((sol.v_star - exact_speed(0.1)).abs() < 1e-4);
    assert!(matches!(find_speed(&wp, (1.0, 2.0), 1e-8), Err(WaveError::BracketInvalid { .. })));
}

#[test]
fn nonlinear_flux_wave_satisfies_energy_identity() {
    let wp = WaveProblem::new(0.25, Sigma::Tanh { eps: 0.1 }).unwrap();
    let sol = find_speed(&wp, (0.0, 2.0), 1e-10).unwrap();
    assert!(sol.v_star > 0.0);
    let (lo, hi) = sol.bracket;
    for v in [lo, hi, sol.v_star] {
        let r = shoot(&wp, v, &ShootOptions::default()).unwrap();
        let e = energy_residual(&wp, &r.path, v);
        assert!(e.max_residual <= 1e-6, "V = {v}: {e:?}");
    }
    let r = shoot(&wp, sol.v_star, &ShootOptions::default()).unwrap();
    assert_eq!(r.outcome, ShootOutcome::Connected);
    // the increase of G + F between the saddles is F(1)
    assert!((sol.profile.dissipation() - wp.big_f(1.0)).abs() < 1e-6);
}

#[test]
fn gaussian_bump_relaxes_to_a_translate() {
    let wp = WaveProblem::new(0.25, Sigma::Identity).unwrap();
    let sol = find_speed(&wp, (0.0, 2.0), 1e-10).unwrap();
    let bump = Perturbation::Gaussian { amplitude: 0.01, center: 0.0, width: 1.0 };
    let rep = simulate_perturbation(&sol.profile, &bump, 60.0, SimGrid::default(), &SimSettings::default()).unwrap();
    match &rep.convergence.outcome {
        Outcome::Converged { fit_r2, .. } => assert!(*fit_r2 >= 0.98),
        other => panic!("{other:?}"),
    }
    assert!(rep.final_residual <= 1e-4);
    let ratio = rep.rate_ratio.unwrap();
    assert!((0.7..=1.3).contains(&ratio), "{ratio}");
    assert!(rep.alpha_hat.abs() < 0.1);
}
