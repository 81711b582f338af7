//! Problem configuration: parsing, validation and resolution into library
//! objects.

use std::collections::BTreeMap;

use serde::Deserialize;
use serde_json::Value;

use normstab::builtin::ExampleKind;
use normstab::ms::MsConfig;
use normstab::normal_form::Tolerances;
use normstab::wave::{Sigma, WaveProblem};
use normstab::{ManifoldChart, VectorFieldSpec};

use crate::poly::{PolyField, Term, MAX_DEGREE};
use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    builtin: Option<String>,
    polynomial: Option<RawPolynomial>,
    wave: Option<RawWave>,
    ms: Option<RawMs>,
    equilibrium: Option<Vec<f64>>,
    chart: Option<RawChart>,
    tolerances: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolynomial {
    dim: usize,
    components: Vec<Vec<RawTerm>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTerm {
    coef: f64,
    powers: Vec<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawWave {
    pub a: f64,
    #[serde(default = "default_sigma_kind")]
    pub sigma_kind: String,
    #[serde(default)]
    pub sigma_params: Vec<f64>,
}

fn default_sigma_kind() -> String {
    "identity".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMs {
    r: Option<f64>,
    r_out: Option<f64>,
    k_max: Option<usize>,
    radial_grid: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawChart {
    Named(String),
    Table(RawChartTable),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChartTable {
    params: Vec<f64>,
    points: Vec<Vec<f64>>,
}

/// Command-specific tolerances that may also be set from the config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtraTolerances {
    /// Integrator tolerance for trajectories.
    pub ode_tol: f64,
    /// Speed bisection tolerance.
    pub tol_v: f64,
    /// Zero threshold for interface-operator modes.
    pub ms_tol_zero: f64,
}

impl Default for ExtraTolerances {
    fn default() -> Self {
        Self { ode_tol: 1e-10, tol_v: 1e-10, ms_tol_zero: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResolvedTolerances {
    pub core: Tolerances,
    pub extra: ExtraTolerances,
}

impl ResolvedTolerances {
    pub fn named(&self) -> BTreeMap<String, f64> {
        let mut m: BTreeMap<String, f64> = self.core.named().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        m.insert("ode_tol".into(), self.extra.ode_tol);
        m.insert("tol_v".into(), self.extra.tol_v);
        m.insert("ms_tol_zero".into(), self.extra.ms_tol_zero);
        m
    }

    fn set(&mut self, key: &str, v: f64) -> Result<(), CliError> {
        let slot = match key {
            "tol_zero" => &mut self.core.tol_zero,
            "gap" => &mut self.core.gap,
            "eps_eq" => &mut self.core.eps_eq,
            "eps_proj" => &mut self.core.eps_proj,
            "eps_newton" => &mut self.core.eps_newton,
            "angle_tol" => &mut self.core.angle_tol,
            "eps_graph" => &mut self.core.eps_graph,
            "ode_tol" => &mut self.extra.ode_tol,
            "tol_v" => &mut self.extra.tol_v,
            "ms_tol_zero" => &mut self.extra.ms_tol_zero,
            _ => return Err(CliError::Config(format!("tolerances.{key}: unknown tolerance"))),
        };
        if !(v > 0.0 && v.is_finite()) {
            return Err(CliError::Config(format!("tolerances.{key}: must be positive and finite, got {v}")));
        }
        *slot = v;
        Ok(())
    }
}

/// An autonomous ODE problem with its equilibrium chart.
#[derive(Clone)]
pub struct OdeProblem {
    pub name: String,
    pub builtin: Option<ExampleKind>,
    pub field: VectorFieldSpec,
    pub chart: ManifoldChart,
}

#[derive(Clone)]
pub enum Problem {
    Ode(OdeProblem),
    Wave(WaveProblem),
    Ms(MsConfig),
}

impl Problem {
    pub fn kind(&self) -> &'static str {
        match self {
            Problem::Ode(p) if p.builtin.is_some() => "builtin",
            Problem::Ode(_) => "polynomial",
            Problem::Wave(_) => "wave",
            Problem::Ms(_) => "ms",
        }
    }
}

#[derive(Clone)]
pub struct ProblemConfig {
    pub problem: Problem,
    pub tolerances: ResolvedTolerances,
    /// Parsed document, used for the config hash.
    pub document: Value,
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses a config document; all diagnostics name the offending field, and
/// syntax errors carry line and column.
pub fn parse_config(text: &str) -> Result<ProblemConfig, CliError> {
    let document: Value = serde_json::from_str(text).map_err(|e| cfg_err(format!("config: {e}")))?;
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| cfg_err(format!("config: {e}")))?;
    let mut tolerances = ResolvedTolerances::default();
    for (k, v) in raw.tolerances.iter().flatten() {
        tolerances.set(k, *v)?;
    }
    if !(tolerances.core.tol_zero < tolerances.core.gap) {
        return Err(cfg_err("tolerances: tol_zero must be below gap"));
    }
    let present = [raw.builtin.is_some(), raw.polynomial.is_some(), raw.wave.is_some(), raw.ms.is_some()];
    let count = present.iter().filter(|p| **p).count();
    if count != 1 {
        return Err(cfg_err(format!("config: exactly one of builtin, polynomial, wave, ms must be present (found {count})")));
    }
    let problem = if let Some(name) = &raw.builtin {
        let kind: ExampleKind = name.parse().map_err(|e: String| cfg_err(format!("builtin: {e}")))?;
        Problem::Ode(resolve_builtin(kind, raw.equilibrium.as_deref(), raw.chart.as_ref())?)
    } else if let Some(p) = &raw.polynomial {
        Problem::Ode(resolve_polynomial(p, raw.equilibrium.as_deref(), raw.chart.as_ref())?)
    } else {
        if raw.equilibrium.is_some() || raw.chart.is_some() {
            return Err(cfg_err("equilibrium/chart: only meaningful for builtin and polynomial problems"));
        }
        if let Some(w) = &raw.wave {
            Problem::Wave(resolve_wave(w)?)
        } else {
            let m = raw.ms.as_ref().expect("one kind is present");
            let d = MsConfig::default();
            let cfg = MsConfig {
                r: m.r.unwrap_or(d.r),
                r_out: m.r_out.unwrap_or(d.r_out),
                k_max: m.k_max.unwrap_or(d.k_max),
                radial_grid: m.radial_grid.unwrap_or(d.radial_grid),
            };
            cfg.validate().map_err(|e| cfg_err(format!("ms: {e}")))?;
            Problem::Ms(cfg)
        }
    };
    Ok(ProblemConfig { problem, tolerances, document })
}

pub fn resolve_wave(w: &RawWave) -> Result<WaveProblem, CliError> {
    if !(w.a > 0.0 && w.a < 0.5) {
        return Err(cfg_err(format!("wave.a: must lie in (0, 1/2), got {}", w.a)));
    }
    let sigma = Sigma::from_kind(&w.sigma_kind, &w.sigma_params).map_err(|e| cfg_err(format!("wave.sigma_kind: {e}")))?;
    WaveProblem::new(w.a, sigma).map_err(|e| cfg_err(format!("wave: {e}")))
}

fn check_dim(field: &str, v: &[f64], n: usize) -> Result<(), CliError> {
    if v.len() != n {
        return Err(cfg_err(format!("{field}: expected {n} components, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(cfg_err(format!("{field}: entries must be finite")));
    }
    Ok(())
}

fn resolve_builtin(kind: ExampleKind, equilibrium: Option<&[f64]>, chart: Option<&RawChart>) -> Result<OdeProblem, CliError> {
    let n = kind.dim();
    let base = match equilibrium {
        Some(u) => {
            check_dim("equilibrium", u, n)?;
            u.to_vec()
        }
        None => kind.u_star(),
    };
    let chart = match chart {
        None => rotated_circle(&base, "equilibrium")?,
        Some(c) => resolve_chart(c, &base, n)?,
    };
    Ok(OdeProblem { name: kind.name().to_string(), builtin: Some(kind), field: kind.field(), chart })
}

fn resolve_polynomial(p: &RawPolynomial, equilibrium: Option<&[f64]>, chart: Option<&RawChart>) -> Result<OdeProblem, CliError> {
    let n = p.dim;
    if n == 0 {
        return Err(cfg_err("polynomial.dim: must be positive"));
    }
    if p.components.len() != n {
        return Err(cfg_err(format!("polynomial.components: expected {n} components, got {}", p.components.len())));
    }
    let mut comps = Vec::with_capacity(n);
    for (i, c) in p.components.iter().enumerate() {
        let mut terms = Vec::with_capacity(c.len());
        for (j, t) in c.iter().enumerate() {
            let at = format!("polynomial.components[{i}][{j}]");
            if t.powers.len() != n {
                return Err(cfg_err(format!("{at}.powers: expected {n} exponents, got {}", t.powers.len())));
            }
            let degree: u32 = t.powers.iter().sum();
            if degree > MAX_DEGREE {
                return Err(cfg_err(format!("{at}.powers: total degree {degree} exceeds {MAX_DEGREE}")));
            }
            if !t.coef.is_finite() {
                return Err(cfg_err(format!("{at}.coef: must be finite")));
            }
            terms.push(Term { coef: t.coef, powers: t.powers.clone() });
        }
        comps.push(terms);
    }
    let base = match equilibrium {
        Some(u) => {
            check_dim("equilibrium", u, n)?;
            u.to_vec()
        }
        None => match chart {
            Some(RawChart::Table(_)) => Vec::new(),
            _ => return Err(cfg_err("equilibrium: required for polynomial problems without a chart table")),
        },
    };
    let chart = match chart {
        None => ManifoldChart::point(base.clone()),
        Some(c) => resolve_chart(c, &base, n)?,
    };
    let poly = PolyField::new(n, comps);
    Ok(OdeProblem { name: "polynomial".into(), builtin: None, field: poly.into_field(chart.base_point()), chart })
}

fn resolve_chart(c: &RawChart, base: &[f64], n: usize) -> Result<ManifoldChart, CliError> {
    match c {
        RawChart::Named(name) => match name.to_ascii_lowercase().as_str() {
            "unit_circle" | "unit-circle" | "circle" => {
                if n < 2 {
                    return Err(cfg_err("chart: unit_circle needs dimension at least 2"));
                }
                rotated_circle(base, "equilibrium")
            }
            "point" => Ok(ManifoldChart::point(base.to_vec())),
            other => Err(cfg_err(format!("chart: unknown chart '{other}' (expected unit_circle, point or a table)"))),
        },
        RawChart::Table(t) => {
            let chart = table_chart(t, n)?;
            if !base.is_empty() {
                let b = chart.base_point();
                let off = b.iter().zip(base).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                if off > 1e-8 {
                    return Err(cfg_err(format!("chart.points: table passes {off:.3e} away from the equilibrium at parameter 0")));
                }
            }
            Ok(chart)
        }
    }
}

/// Unit circle in the first two coordinates based at the given point, which
/// must lie on it with the remaining coordinates zero.
fn rotated_circle(base: &[f64], field: &str) -> Result<ManifoldChart, CliError> {
    let n = base.len();
    let r = base[0].hypot(base[1]);
    let rest = base[2..].iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if (r - 1.0).abs() > 1e-10 || rest > 1e-10 {
        return Err(cfg_err(format!("{field}: {base:?} is not on the unit circle")));
    }
    let theta0 = base[0].atan2(base[1]);
    Ok(ManifoldChart::new(
        "unit-circle",
        1,
        n,
        move |z: &[f64]| {
            let mut p = vec![0.0; n];
            p[0] = (theta0 + z[0]).sin();
            p[1] = (theta0 + z[0]).cos();
            p
        },
        std::f64::consts::PI,
    ))
}

/// One-parameter chart through sampled points, interpolated by cubic
/// Lagrange polynomials on the four nearest nodes; parameter 0 is the base
/// point.
fn table_chart(t: &RawChartTable, n: usize) -> Result<ManifoldChart, CliError> {
    let k = t.params.len();
    if k < 4 || t.points.len() != k {
        return Err(cfg_err(format!("chart: need at least 4 params with one point each (got {} params, {} points)", k, t.points.len())));
    }
    for (i, p) in t.points.iter().enumerate() {
        check_dim(&format!("chart.points[{i}]"), p, n)?;
    }
    if t.params.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(cfg_err("chart.params: must be strictly increasing"));
    }
    let (lo, hi) = (t.params[0], t.params[k - 1]);
    if !(lo < 0.0 && hi > 0.0) {
        return Err(cfg_err("chart.params: parameter 0 must lie strictly inside the table"));
    }
    let params = t.params.clone();
    let points = t.points.clone();
    Ok(ManifoldChart::new(
        "table",
        1,
        n,
        move |z: &[f64]| {
            let x = z[0].clamp(params[0], params[params.len() - 1]);
            let i = params.partition_point(|p| *p < x).clamp(2, params.len() - 2);
            let idx = [i - 2, i - 1, i, i + 1];
            let mut out = vec![0.0; points[0].len()];
            for &a in &idx {
                let mut w = 1.0;
                for &b in &idx {
                    if a != b {
                        w *= (x - params[b]) / (params[a] - params[b]);
                    }
                }
                for (o, p) in out.iter_mut().zip(&points[a]) {
                    *o += w * p;
                }
            }
            out
        },
        (-lo).min(hi),
    ))
}

/// Parses a comma-separated list of reals.
pub fn parse_list(flag: &str, s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| cfg_err(format!("{flag}: '{}' is not a finite number", x.trim())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err(text: &str) -> String {
        match parse_config(text) {
            Err(CliError::Config(m)) => m,
            Err(e) => panic!("unexpected error kind: {e}"),
            Ok(_) => panic!("accepted: {text}"),
        }
    }

    #[test]
    fn builtin_defaults() {
        let c = parse_config(r#"{"builtin": "ex1"}"#).unwrap();
        let Problem::Ode(p) = c.problem else { panic!() };
        assert_eq!(p.chart.base_point(), vec![0.0, 1.0]);
        assert_eq!(c.tolerances, ResolvedTolerances::default());
    }

    #[test]
    fn rejections_name_the_field() {
        assert!(err(r#"{"builtin": "Ex1", "ms": {}}"#).contains("exactly one"));
        assert!(err(r#"{}"#).contains("exactly one"));
        assert!(err(r#"{"builtin": "Ex9"}"#).starts_with("builtin"));
        assert!(err(r#"{"wave": {"a": 0.5}}"#).starts_with("wave.a"));
        assert!(err(r#"{"wave": {"a": 0.2, "sigma_kind": "cubic"}}"#).starts_with("wave.sigma_kind"));
        assert!(err(r#"{"builtin": "Ex1", "tolerances": {"tol_zero": -1}}"#).starts_with("tolerances.tol_zero"));
        assert!(err(r#"{"builtin": "Ex1", "tolerances": {"bogus": 1}}"#).starts_with("tolerances.bogus"));
        assert!(err(r#"{"builtin": "Ex1", "equilibrium": [1, 1]}"#).starts_with("equilibrium"));
        assert!(err("{\"builtin\": \"Ex1\",\n  \"extra\": 1}").contains("line 2"));
        let deg7 = r#"{"polynomial": {"dim": 1, "components": [[{"coef": 1, "powers": [7]}]]}, "equilibrium": [0]}"#;
        assert!(err(deg7).starts_with("polynomial.components[0][0].powers"));
    }

    #[test]
    fn rotated_circle_is_based_at_the_equilibrium() {
        let c = parse_config(r#"{"builtin": "Ex1", "equilibrium": [1, 0]}"#).unwrap();
        let Problem::Ode(p) = c.problem else { panic!() };
        let b = p.chart.base_point();
        assert!((b[0] - 1.0).abs() < 1e-15 && b[1].abs() < 1e-15);
    }

    #[test]
    fn table_chart_reproduces_a_parabola() {
        let params: Vec<f64> = (0..9).map(|i| -0.4 + 0.1 * i as f64).collect();
        let points: Vec<Vec<f64>> = params.iter().map(|s| vec![*s, 0.5 * s * s]).collect();
        let t = RawChartTable { params, points };
        let chart = table_chart(&t, 2).unwrap();
        for z in [-0.33, 0.0, 0.07, 0.29] {
            let p = chart.eval(&[z]);
            assert!((p[0] - z).abs() < 1e-14 && (p[1] - 0.5 * z * z).abs() < 1e-14);
        }
    }
}
