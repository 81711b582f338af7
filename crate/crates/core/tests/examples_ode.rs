use normstab::builtin::{hyperbolic_field, lyapunov_check, polar_relation_residual, ExampleKind, SINGULAR_BAND};
use normstab::normal_form::{classify, Condition, Tolerances, Verdict};
use normstab::ode::{integrate, integrate_with, simulate_and_assess, FitWindow, IntegrateOptions, Outcome};
use normstab::ManifoldChart;

fn start_at(r: f64, angle: f64) -> [f64; 2] {
    [r * angle.cos(), r * angle.sin()]
}

#[test]
fn classification_verdicts() {
    let tol = Tolerances::default();
    let c = classify(&ExampleKind::Ex1.field(), &ExampleKind::Ex1.chart(), &tol);
    assert_eq!(c.verdict, Verdict::NormallyStable);
    assert_eq!(c.dims, (1, 1, 0));

    let c = classify(&ExampleKind::Ex2m1.field(), &ExampleKind::Ex2m1.chart(), &tol);
    assert_eq!(c.verdict, Verdict::Inconclusive);
    assert_eq!(c.failed_conditions(), vec![Condition::SemisimpleZero]);

    let c = classify(&ExampleKind::Ex2m2.field(), &ExampleKind::Ex2m2.chart(), &tol);
    assert_eq!(c.verdict, Verdict::Inconclusive);
    assert_eq!(c.failed_conditions(), vec![Condition::TangentIsKernel]);
    let t = c.tangent.unwrap();
    assert!(t.contained && !t.equal && t.kernel_dim == 2);

    let c = classify(&hyperbolic_field(), &ManifoldChart::unit_circle(3), &tol);
    assert_eq!(c.verdict, Verdict::NormallyHyperbolic);
    assert_eq!(c.dims, (1, 1, 1));
}

#[test]
fn example_one_relation_and_radial_law() {
    let fs = ExampleKind::Ex1.field();
    for r0 in [0.5, 1.5, 2.0] {
        let traj = integrate(&fs, &start_at(r0, 0.7), 20.0, 1e-11).unwrap();
        let rel = polar_relation_residual(&traj, ExampleKind::Ex1).unwrap();
        assert!(rel.residual < 1e-6, "r0 = {r0}: {rel:?}");
        // finite total rotation equal to ln r0 in the limit r -> 1
        assert!((rel.theta_variation - r0.ln()).abs() < 1e-6);
        // ṙ = −r(r − 1) from Cartesian samples
        for u in traj.states.iter().step_by(10) {
            let f = fs.eval(u);
            let r = u[0].hypot(u[1]);
            let rdot = (u[0] * f[0] + u[1] * f[1]) / r;
            assert!((rdot + r * (r - 1.0)).abs() < 1e-12);
        }
    }
}

#[test]
fn spiral_relations_outside_singular_band() {
    for kind in [ExampleKind::Ex2m1, ExampleKind::Ex2m2] {
        let fs = kind.field();
        for r0 in [0.5, 1.5] {
            let opts = IntegrateOptions::new(1e-11).stop_when(|_, u| (u[0].hypot(u[1]) - 1.0).abs() < SINGULAR_BAND);
            let traj = integrate_with(&fs, &start_at(r0, 0.3), 1e6, &opts).unwrap();
            let traj = traj.truncated_before(|_, u| (u[0].hypot(u[1]) - 1.0).abs() < SINGULAR_BAND);
            let rel = polar_relation_residual(&traj, kind).unwrap();
            assert!(rel.residual < 1e-6, "{kind} r0 = {r0}: {rel:?}");
        }
    }
}

#[test]
fn spirals_wind_around_the_circle() {
    // θ̇ = (r − 1)^m while r → 1 only algebraically, so the angle grows
    // without bound (like √t for m = 1, like ln t for m = 2)
    let horizons = [(ExampleKind::Ex2m1, 400.0), (ExampleKind::Ex2m2, 1e13)];
    for (kind, t_max) in horizons {
        let traj = integrate(&kind.field(), &start_at(1.2, 0.0), t_max, 1e-12).unwrap();
        let theta = normstab::builtin::unwrapped_angles(&traj.states).unwrap();
        let variation = theta.last().unwrap() - theta[0];
        assert!(variation > 4.0 * std::f64::consts::PI, "{kind}: {variation}");
    }
    let traj = integrate(&ExampleKind::Ex1.field(), &start_at(1.2, 0.0), 40.0, 1e-12).unwrap();
    let theta = normstab::builtin::unwrapped_angles(&traj.states).unwrap();
    assert!((theta.last().unwrap() - theta[0] - 1.2f64.ln()).abs() < 1e-6);
}

#[test]
fn lyapunov_function_decreases() {
    for (kind, u0) in [(ExampleKind::Ex2m1, [0.5, 0.5]), (ExampleKind::Ex2m2, [1.5, 0.0])] {
        let traj = integrate(&kind.field(), &u0, 200.0, 1e-11).unwrap();
        assert!(lyapunov_check(&traj) <= 1e-8, "{kind}");
    }
}

#[test]
fn example_one_converges_to_the_circle() {
    let fs = ExampleKind::Ex1.field();
    let chart = ExampleKind::Ex1.chart();
    let opts = IntegrateOptions::new(1e-12);
    let (_, rep) = simulate_and_assess(&fs, &chart, &[0.5, 0.5], 30.0, 2.0, &opts, &FitWindow::default()).unwrap();
    match rep.outcome {
        Outcome::Converged { u_inf, rate, .. } => {
            assert!((u_inf[0].hypot(u_inf[1]) - 1.0).abs() < 1e-6);
            assert!((rate - 1.0).abs() < 0.2, "rate {rate}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn hyperbolic_starts() {
    let fs = hyperbolic_field();
    let chart = ManifoldChart::unit_circle(3);
    let opts = IntegrateOptions::new(1e-12);
    let (_, rep) = simulate_and_assess(&fs, &chart, &[0.0, 1.0, 0.01], 12.0, 0.1, &opts, &FitWindow::default()).unwrap();
    match rep.outcome {
        Outcome::Converged { u_inf, .. } => assert!((u_inf[0].hypot(u_inf[1]) - 1.0).abs() < 1e-8 && u_inf[2].abs() < 1e-8),
        other => panic!("{other:?}"),
    }
    let (_, rep) = simulate_and_assess(&fs, &chart, &[0.0, 1.01, 0.0], 12.0, 0.1, &opts, &FitWindow::default()).unwrap();
    assert!(matches!(rep.outcome, Outcome::LeftNeighborhood { t0 } if t0 > 0.0));
}
