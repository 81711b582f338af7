//! One function per subcommand; each returns a finished report.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use normstab::builtin::{
    dichotomy_sweep, lyapunov_check, polar_relation_residual, run_sweep, stability_sweep, ExampleKind, SweepConfig, SweepRun, SINGULAR_BAND,
};
use normstab::ms::{
    circle_mesh, flat_symbol_ladder, mode_eigenvalues, ms_tangent_kernel_check, sphere_chart, sphere_chart_derivative,
    symbol_scaling_slope, MsConfig,
};
use normstab::normal_form::{classify, Classification};
use normstab::ode::{
    dist_to_manifold, integrate, integrate_with, simulate_and_assess, ConvergenceReport, FitWindow, IntegrateOptions, Outcome,
};
use normstab::wave::{
    discretize_linearization, energy_residual, find_speed, shoot, simulate_perturbation, wave_spectrum, Perturbation, ShootOptions,
    SimGrid, SimSettings, WaveProblem, EPS_TAIL,
};

use crate::config::{OdeProblem, ResolvedTolerances};
use crate::report::{num, nums, Series};
use crate::CliError;

/// Result payload and series of a command, before provenance is attached.
pub struct Output {
    pub result: Value,
    pub series: Vec<Series>,
}

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

fn matrix_rows(m: &DMatrix<f64>) -> Value {
    Value::Array((0..m.nrows()).map(|i| nums(&m.row(i).iter().cloned().collect::<Vec<_>>())).collect())
}

pub fn classification_json(c: &Classification) -> Value {
    let eig: Vec<Value> = match &c.spectrum {
        Some(s) => s
            .eigenvalues
            .iter()
            .zip(&s.groups)
            .map(|(l, g)| json!({ "re": num(l.re), "im": num(l.im), "group": format!("{g:?}") }))
            .collect(),
        None => vec![],
    };
    json!({
        "verdict": c.verdict.to_string(),
        "failed": c.failed.iter().map(|f| json!({ "condition": f.condition.label(), "detail": f.detail })).collect::<Vec<_>>(),
        "dims": [c.dims.0, c.dims.1, c.dims.2],
        "u_star": nums(&c.u_star),
        "a0": c.a0.as_ref().map(|a| matrix_rows(a.as_matrix())),
        "eigenvalues": eig,
        "zero": c.zero.as_ref().map(|z| json!({
            "semisimple": z.semisimple,
            "kernel_dim": z.kernel_dim,
            "rank_margin": num(z.rank_margin),
            "kernel_basis": matrix_rows(&z.kernel_basis),
        })),
        "tangent": c.tangent.as_ref().map(|t| json!({
            "contained": t.contained,
            "equal": t.equal,
            "chart_dim": t.chart_dim,
            "kernel_dim": t.kernel_dim,
            "angles": nums(&t.angles),
        })),
        "chart_residual": c.chart_residual.map(num),
        "chart_rank": c.chart_rank,
    })
}

pub fn cmd_classify(p: &OdeProblem, tol: &ResolvedTolerances) -> Result<Output, CliError> {
    let c = classify(&p.field, &p.chart, &tol.core);
    let mut eig = Series::new("eigenvalues", &["index", "re", "im"]);
    for (i, l) in c.eigenvalues().iter().enumerate() {
        eig.push(vec![i as f64, l.re, l.im]);
    }
    let mut result = classification_json(&c);
    result["problem"] = json!(p.name);
    Ok(Output { result, series: vec![eig] })
}

fn outcome_json(r: &ConvergenceReport) -> Value {
    let mut v = json!({ "outcome": r.outcome.label(), "rho": num(r.rho), "delta": num(r.delta) });
    match &r.outcome {
        Outcome::Converged { u_inf, rate, fit_r2 } => {
            v["u_inf"] = nums(u_inf);
            v["rate"] = num(*rate);
            v["fit_r2"] = num(*fit_r2);
        }
        Outcome::LeftNeighborhood { t0 } => v["t0"] = num(*t0),
        Outcome::Undetermined { reason } => v["reason"] = json!(reason),
    }
    v
}

fn outcome_code(o: &Outcome) -> f64 {
    match o {
        Outcome::Converged { .. } => 0.0,
        Outcome::LeftNeighborhood { .. } => 1.0,
        Outcome::Undetermined { .. } => 2.0,
    }
}

pub fn cmd_simulate(p: &OdeProblem, u0: &[f64], t_max: f64, rho: f64, tol: &ResolvedTolerances) -> Result<Output, CliError> {
    if u0.len() != p.field.dim() {
        return Err(CliError::Config(format!("--u0: expected {} components, got {}", p.field.dim(), u0.len())));
    }
    if !(t_max >= 0.0 && t_max.is_finite()) {
        return Err(CliError::Config(format!("--t-max: must be finite and nonnegative, got {t_max}")));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(CliError::Config(format!("--rho: must be positive, got {rho}")));
    }
    if !p.field.in_domain(u0) {
        return Err(CliError::Config(format!("--u0: {u0:?} lies outside the domain of the field")));
    }
    let opts = IntegrateOptions::new(tol.extra.ode_tol);
    let window = FitWindow { eps_eq: tol.core.eps_eq.max(FitWindow::default().eps_eq), ..FitWindow::default() };
    let (traj, report) = simulate_and_assess(&p.field, &p.chart, u0, t_max, rho, &opts, &window).map_err(numerical)?;
    let n = u0.len();
    let mut cols = vec!["t".to_string()];
    cols.extend((0..n).map(|i| format!("u{i}")));
    cols.push("dist".into());
    let mut s = Series::with_columns("trajectory", cols);
    for (t, u) in traj.times.iter().zip(&traj.states) {
        let mut row = vec![*t];
        row.extend(u);
        row.push(dist_to_manifold(u, &p.chart).dist);
        s.push(row);
    }
    let mut result = outcome_json(&report);
    result["problem"] = json!(p.name);
    result["samples"] = json!(traj.len());
    result["final_state"] = nums(traj.states.last().expect("trajectory holds the start"));
    result["final_time"] = num(*traj.times.last().expect("trajectory holds the start"));
    Ok(Output { result, series: vec![s] })
}

pub struct WaveFindArgs {
    pub bracket: (f64, f64),
}

pub fn cmd_wave_find(wp: &WaveProblem, args: &WaveFindArgs, tol: &ResolvedTolerances) -> Result<Output, CliError> {
    let sol = find_speed(wp, args.bracket, tol.extra.tol_v).map_err(numerical)?;
    let path = shoot(wp, sol.v_star, &ShootOptions::default()).map_err(numerical)?;
    let energy = energy_residual(wp, &path.path, sol.v_star);
    let p = &sol.profile;
    let mut s = Series::new("profile", &["s", "w", "z"]);
    for i in 0..p.s.len() {
        s.push(vec![p.s[i], p.w[i], p.z[i]]);
    }
    let result = json!({
        "a": num(wp.a),
        "sigma": wp.sigma.to_string(),
        "v_star": num(sol.v_star),
        "bracket": [num(sol.bracket.0), num(sol.bracket.1)],
        "bisections": sol.bisections,
        "lambda_left": num(p.lambda_left),
        "mu_right": num(p.mu_right),
        "matching_gap": num(p.matching_gap),
        "truncation_length": num(p.truncation_length()),
        "dissipation": num(p.dissipation()),
        "f_integral": num(wp.big_f(1.0)),
        "energy_residual": num(energy.max_residual),
    });
    Ok(Output { result, series: vec![s] })
}

pub fn cmd_wave_spectrum(wp: &WaveProblem, l: f64, n: usize, tol: &ResolvedTolerances) -> Result<Output, CliError> {
    if !(l > 0.0) || n < 10 {
        return Err(CliError::Config(format!("--l/--n: need L > 0 and N ≥ 10 (got L = {l}, N = {n})")));
    }
    let sol = find_speed(wp, (0.0, 2.0), tol.extra.tol_v).map_err(numerical)?;
    let lin = discretize_linearization(&sol.profile, l, n).map_err(numerical)?;
    let rep = wave_spectrum(&lin).map_err(numerical)?;
    let mut s = Series::new("spectrum", &["index", "lambda", "localized"]);
    for (i, (l, loc)) in rep.eigenvalues.iter().zip(&rep.localized).enumerate() {
        s.push(vec![i as f64, *l, if *loc { 1.0 } else { 0.0 }]);
    }
    let result = json!({
        "a": num(wp.a),
        "sigma": wp.sigma.to_string(),
        "v_star": num(sol.v_star),
        "l": num(rep.l),
        "n": rep.n,
        "zero_mode_index": rep.zero_mode_index,
        "zero_mode_gap": num(rep.zero_mode_gap),
        "zero_mode_correlation": num(rep.zero_mode_correlation),
        "stable_margin": num(rep.stable_margin),
        "essential_min": rep.essential_min.map(num),
        "kernel_residual": num(lin.kernel_residual()),
    });
    Ok(Output { result, series: vec![s] })
}

pub struct WaveSimArgs {
    pub perturbation: Perturbation,
    pub t_max: f64,
    pub grid: SimGrid,
}

pub fn cmd_wave_simulate(wp: &WaveProblem, args: &WaveSimArgs, tol: &ResolvedTolerances) -> Result<Output, CliError> {
    if !(args.t_max > 0.0 && args.t_max.is_finite()) {
        return Err(CliError::Config(format!("--t-max: must be positive, got {}", args.t_max)));
    }
    let sol = find_speed(wp, (0.0, 2.0), tol.extra.tol_v).map_err(numerical)?;
    if sol.profile.tail(args.grid.l) > EPS_TAIL {
        return Err(CliError::Config(format!("--l: {} is too short for the wave tails", args.grid.l)));
    }
    let settings = SimSettings::default();
    let rep = simulate_perturbation(&sol.profile, &args.perturbation, args.t_max, args.grid, &settings).map_err(numerical)?;
    let mut s = Series::new("convergence", &["t", "residual", "norm"]);
    for (i, (t, r)) in rep.convergence.dist_series.iter().enumerate() {
        s.push(vec![*t, *r, rep.norms.get(i).copied().unwrap_or(f64::NAN)]);
    }
    let mut result = outcome_json(&rep.convergence);
    // the limit is a whole grid function; the translate residual describes it
    if let Some(o) = result.as_object_mut() {
        o.remove("u_inf");
    }
    result["a"] = num(wp.a);
    result["sigma"] = json!(wp.sigma.to_string());
    result["v_star"] = num(sol.v_star);
    result["v_discrete"] = num(rep.v_discrete);
    result["alpha_hat"] = num(rep.alpha_hat);
    result["final_residual"] = num(rep.final_residual);
    result["stable_margin"] = num(rep.stable_margin);
    result["rate_ratio"] = rep.rate_ratio.map(num).unwrap_or(Value::Null);
    Ok(Output { result, series: vec![s] })
}

pub struct SymbolArgs {
    pub xi: Vec<f64>,
    pub strip_height: Option<f64>,
    pub coarsest: f64,
    pub levels: usize,
}

pub fn cmd_ms_symbol(args: &SymbolArgs) -> Result<Output, CliError> {
    if args.levels < 2 || !(args.coarsest > 0.0) {
        return Err(CliError::Config("--levels/--step: need at least 2 levels and a positive step".into()));
    }
    let (reports, orders) = flat_symbol_ladder(&args.xi, args.strip_height, args.coarsest, args.levels).map_err(|e| match e {
        normstab::ms::MsError::InvalidConfig(m) => CliError::Config(format!("--xi: {m}")),
        other => numerical(other),
    })?;
    let finest = reports.last().expect("ladder has levels");
    let mut table = Series::new("symbol", &["xi", "jump", "reference", "rel_err"]);
    for r in &finest.rows {
        table.push(vec![r.xi, r.jump, r.reference, r.rel_err]);
    }
    let mut ladder = Series::new("ladder", &["step", "max_rel_err"]);
    for r in &reports {
        ladder.push(vec![r.step, r.max_rel_err]);
    }
    let result = json!({
        "max_rel_err": num(finest.max_rel_err),
        "step": num(finest.step),
        "orders": nums(&orders),
        "scaling_slope": if finest.rows.len() >= 2 { num(symbol_scaling_slope(finest)) } else { Value::Null },
    });
    Ok(Output { result, series: vec![table, ladder] })
}

pub fn cmd_ms_modes(cfg: &MsConfig, tol: &ResolvedTolerances) -> Result<Output, CliError> {
    let rep = mode_eigenvalues(cfg, tol.extra.ms_tol_zero).map_err(numerical)?;
    let tangent = ms_tangent_kernel_check(cfg, &[], tol.extra.ms_tol_zero, tol.core.angle_tol).map_err(numerical)?;
    let mut s = Series::new("modes", &["k", "jump", "a_sigma", "lambda", "reference"]);
    for m in &rep.modes {
        s.push(vec![m.k as f64, m.jump, m.a_sigma, m.lambda, m.reference]);
    }
    let result = json!({
        "r": num(cfg.r),
        "r_out": num(cfg.r_out),
        "k_max": cfg.k_max,
        "radial_grid": cfg.radial_grid,
        "kernel_dim": rep.kernel_dim,
        "zero_modes": rep.zero_modes(),
        "nondecreasing": rep.nondecreasing(),
        "lambdas": nums(&rep.modes.iter().map(|m| m.lambda).collect::<Vec<_>>()),
        "tangent_equals_kernel": tangent.equal,
        "tangent_angles": nums(&tangent.angles),
    });
    Ok(Output { result, series: vec![s] })
}

pub fn cmd_ms_chart(r: f64, z: [f64; 3], mesh_size: usize) -> Result<Output, CliError> {
    if !(r > 0.0) || mesh_size < 4 {
        return Err(CliError::Config(format!("--r/--mesh: need R > 0 and at least 4 mesh points (got R = {r}, mesh = {mesh_size})")));
    }
    let mesh = circle_mesh(mesh_size);
    let rho = sphere_chart(&z, r, &mesh).map_err(|e| CliError::Config(format!("--z: {e}")))?;
    let dirs = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let derivs: Vec<Vec<f64>> = dirs.iter().map(|d| sphere_chart_derivative(d, r, &mesh)).collect::<Result<_, _>>().map_err(numerical)?;
    // the derivative at 0 is (1, cos θ, sin θ)
    let mut deriv_err: f64 = 0.0;
    for (i, t) in mesh.iter().enumerate() {
        let want = [1.0, t.cos(), t.sin()];
        for j in 0..3 {
            deriv_err = deriv_err.max((derivs[j][i] - want[j]).abs());
        }
    }
    // points of the chart lie on the circle of radius R + z₀ centered at (z₁, z₂)
    let mut geometry_err: f64 = 0.0;
    let mut s = Series::new("chart", &["theta", "rho", "d_z0", "d_z1", "d_z2"]);
    for (i, t) in mesh.iter().enumerate() {
        let (x, y) = ((r + rho[i]) * t.cos(), (r + rho[i]) * t.sin());
        geometry_err = geometry_err.max(((x - z[1]).hypot(y - z[2]) - (r + z[0])).abs());
        s.push(vec![*t, rho[i], derivs[0][i], derivs[1][i], derivs[2][i]]);
    }
    let result = json!({
        "r": num(r),
        "z": nums(&z),
        "max_abs_rho": num(rho.iter().fold(0.0f64, |m, x| m.max(x.abs()))),
        "derivative_error": num(deriv_err),
        "geometry_error": num(geometry_err),
    });
    Ok(Output { result, series: vec![s] })
}

fn sweep_series(runs: &[SweepRun], n: usize) -> Series {
    let mut cols: Vec<String> = ["index", "on_slice", "outcome", "rate", "rate_ratio"].iter().map(|s| s.to_string()).collect();
    cols.extend((0..n).map(|i| format!("u0_{i}")));
    let mut s = Series::with_columns("sweep", cols);
    for (i, r) in runs.iter().enumerate() {
        let rate = match r.report.outcome {
            Outcome::Converged { rate, .. } => rate,
            _ => f64::NAN,
        };
        let mut row =
            vec![i as f64, if r.on_slice { 1.0 } else { 0.0 }, outcome_code(&r.report.outcome), rate, r.rate_ratio.unwrap_or(f64::NAN)];
        row.extend(&r.u0);
        s.push(row);
    }
    s
}

fn sweep_summary(runs: &[SweepRun]) -> Value {
    let count = |f: fn(&Outcome) -> bool| runs.iter().filter(|r| f(&r.report.outcome)).count();
    let ratios: Vec<f64> = runs.iter().filter_map(|r| r.rate_ratio).collect();
    json!({
        "runs": runs.len(),
        "converged": count(|o| matches!(o, Outcome::Converged { .. })),
        "left_neighborhood": count(|o| matches!(o, Outcome::LeftNeighborhood { .. })),
        "undetermined": count(|o| matches!(o, Outcome::Undetermined { .. })),
        "slice_runs": runs.iter().filter(|r| r.on_slice).count(),
        "slice_converged": runs.iter().filter(|r| r.on_slice && matches!(r.report.outcome, Outcome::Converged { .. })).count(),
        "rate_ratio_min": ratios.iter().cloned().reduce(f64::min).map(num),
        "rate_ratio_max": ratios.iter().cloned().reduce(f64::max).map(num),
    })
}

/// Random starts in the `delta` ball around `u_*`, uniform in volume.
fn random_starts(kind: ExampleKind, count: usize, delta: f64, seed: u64) -> Vec<(Vec<f64>, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u_star = kind.u_star();
    let n = u_star.len();
    (0..count)
        .map(|_| {
            let dir: Vec<f64> = loop {
                let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-3 && norm <= 1.0 {
                    break g.iter().map(|x| x / norm).collect();
                }
            };
            let radius = delta * rng.gen::<f64>().powf(1.0 / n as f64);
            (u_star.iter().zip(&dir).map(|(u, d)| u + radius * d).collect(), false)
        })
        .collect()
}

pub struct ExampleArgs {
    pub seed: u64,
    pub random_starts: usize,
}

pub fn cmd_examples_run(kind: ExampleKind, args: &ExampleArgs, tol: &ResolvedTolerances) -> Result<Output, CliError> {
    let c = classify(&kind.field(), &kind.chart(), &tol.core);
    let mut result = json!({ "example": kind.name(), "classification": classification_json(&c) });
    let mut series = Vec::new();
    match kind {
        ExampleKind::Ex1 | ExampleKind::Hyperbolic3D => {
            let cfg = if kind == ExampleKind::Ex1 {
                SweepConfig { delta: 1e-3, rho: 0.05, t_max: 15.0, tol: tol.extra.ode_tol.min(1e-12) }
            } else {
                SweepConfig { delta: 0.02, rho: 0.1, t_max: 12.0, tol: tol.extra.ode_tol.min(1e-12) }
            };
            let mut runs = if kind == ExampleKind::Ex1 { stability_sweep(kind, 32, &cfg) } else { dichotomy_sweep(48, 16, &cfg) }
                .map_err(numerical)?;
            if args.random_starts > 0 {
                runs.extend(run_sweep(kind, random_starts(kind, args.random_starts, cfg.delta, args.seed), &cfg).map_err(numerical)?);
            }
            result["sweep"] = sweep_summary(&runs);
            result["sweep"]["delta"] = num(cfg.delta);
            result["sweep"]["t_max"] = num(cfg.t_max);
            series.push(sweep_series(&runs, kind.dim()));
        }
        ExampleKind::Ex2m1 | ExampleKind::Ex2m2 => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let mut starts: Vec<(f64, f64)> = [0.5, 1.5, 2.0].iter().map(|r| (*r, 0.3)).collect();
            while starts.len() < 3 + args.random_starts {
                let r: f64 = rng.gen_range(0.3..2.5);
                if (r - 1.0).abs() > 2.0 * SINGULAR_BAND {
                    starts.push((r, rng.gen_range(0.0..std::f64::consts::TAU)));
                }
            }
            let mut s = Series::new("relations", &["r0", "theta0", "c0", "residual", "lyapunov_max_increase"]);
            let mut worst: f64 = 0.0;
            let mut worst_lyap: f64 = 0.0;
            for (r0, th) in starts {
                let u0 = [r0 * th.cos(), r0 * th.sin()];
                // the relation is singular at r = 1, so stop at the band
                let near = |_: f64, u: &[f64]| (u[0].hypot(u[1]) - 1.0).abs() < SINGULAR_BAND;
                let opts = IntegrateOptions::new(tol.extra.ode_tol.min(1e-11)).stop_when(near);
                let traj = integrate_with(&kind.field(), &u0, 1e6, &opts).map_err(numerical)?.truncated_before(near);
                let rel = polar_relation_residual(&traj, kind).map_err(numerical)?;
                let lyap = lyapunov_check(&integrate(&kind.field(), &u0, 200.0, tol.extra.ode_tol.min(1e-11)).map_err(numerical)?);
                worst = worst.max(rel.residual);
                worst_lyap = worst_lyap.max(lyap);
                s.push(vec![r0, th, rel.c0, rel.residual, lyap]);
            }
            result["relations"] = json!({
                "max_residual": num(worst),
                "lyapunov_max_increase": num(worst_lyap),
                "singular_band": num(SINGULAR_BAND),
            });
            series.push(s);
        }
    }
    Ok(Output { result, series })
}
