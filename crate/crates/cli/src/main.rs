//! `normstab` command-line front end.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 numerical
//! failure.

mod commands;
mod config;
mod poly;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use normstab::builtin::ExampleKind;
use normstab::ms::MsConfig;
use normstab::wave::{Perturbation, SimGrid, WaveProblem};

use commands::Output;
use config::{parse_config, parse_list, Problem, ProblemConfig, RawWave, ResolvedTolerances};
use report::RunReport;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "normstab", version, about = "Stability of equilibria on manifolds of equilibria")]
struct Cli {
    /// Write report.json and series CSVs here instead of printing to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classify the equilibrium of a builtin or polynomial problem.
    Classify {
        /// Problem config (JSON).
        #[arg(long)]
        config: PathBuf,
    },
    /// Integrate from a start and assess convergence to the equilibrium set.
    Simulate {
        /// Problem config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated initial state.
        #[arg(long, allow_hyphen_values = true)]
        u0: String,
        /// Integration horizon.
        #[arg(long)]
        t_max: f64,
        /// Radius of the neighborhood of the equilibrium set.
        #[arg(long)]
        rho: f64,
    },
    /// Traveling waves of the bistable quasilinear equation.
    Wave {
        #[command(subcommand)]
        op: WaveOp,
    },
    /// Interface operator around a circle.
    Ms {
        #[command(subcommand)]
        op: MsOp,
    },
    /// Reference problems.
    Examples {
        #[command(subcommand)]
        op: ExamplesOp,
    },
}

#[derive(Debug, Args)]
struct WaveParams {
    /// Wave config (JSON); excludes the inline wave flags.
    #[arg(long, conflicts_with_all = ["a", "sigma", "sigma_param"])]
    config: Option<PathBuf>,
    /// Unstable zero of the cubic, in (0, 1/2).
    #[arg(long)]
    a: Option<f64>,
    /// Flux function: identity or tanh.
    #[arg(long, default_value = "identity")]
    sigma: String,
    /// Parameters of the flux function (repeatable).
    #[arg(long = "sigma-param", allow_hyphen_values = true)]
    sigma_param: Vec<f64>,
}

#[derive(Debug, Subcommand)]
enum WaveOp {
    /// Bisect for the wave speed and emit the profile.
    Find {
        #[command(flatten)]
        params: WaveParams,
        /// Initial speed bracket `lo,hi`; `hi` is widened when needed.
        #[arg(long, default_value = "0,2")]
        bracket: String,
    },
    /// Spectrum of the linearization on a truncated interval.
    Spectrum {
        #[command(flatten)]
        params: WaveParams,
        /// Half-length of the domain [-L, L].
        #[arg(long, default_value_t = 40.0)]
        l: f64,
        /// Number of grid points.
        #[arg(long, default_value_t = 2000)]
        n: usize,
    },
    /// Perturb the wave by a Gaussian and follow the relaxation.
    Simulate {
        #[command(flatten)]
        params: WaveParams,
        /// Amplitude of the Gaussian perturbation.
        #[arg(long, default_value_t = 0.01, allow_hyphen_values = true)]
        amplitude: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        center: f64,
        /// Width of the Gaussian perturbation.
        #[arg(long, default_value_t = 1.0)]
        width: f64,
        /// Integration horizon.
        #[arg(long, default_value_t = 60.0)]
        t_max: f64,
        /// Half-length of the domain [-L, L].
        #[arg(long, default_value_t = 40.0)]
        l: f64,
        /// Number of grid points.
        #[arg(long, default_value_t = 1000)]
        n: usize,
    },
}

#[derive(Debug, Args)]
struct MsParams {
    /// Interface config (JSON); excludes the inline geometry flags.
    #[arg(long, conflicts_with_all = ["r", "r_out", "k_max", "radial_grid"])]
    config: Option<PathBuf>,
    /// Interface radius.
    #[arg(long)]
    r: Option<f64>,
    /// Outer boundary radius.
    #[arg(long)]
    r_out: Option<f64>,
    /// Highest Fourier mode.
    #[arg(long)]
    k_max: Option<usize>,
    /// Radial grid points per phase.
    #[arg(long)]
    radial_grid: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum MsOp {
    /// Numeric jump of the flat problem against 2|ξ|³.
    Symbol {
        /// Wave numbers to test.
        #[arg(long, default_value = "0.5,1,2,4")]
        xi: String,
        /// Strip half-height; defaults to 12 / min ξ.
        #[arg(long)]
        strip_height: Option<f64>,
        /// Coarsest grid step; each level halves it.
        #[arg(long, default_value_t = 1e-2)]
        step: f64,
        /// Number of grid refinements.
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
    /// Per-mode eigenvalues of the linearized operator.
    Modes {
        #[command(flatten)]
        params: MsParams,
    },
    /// Sampled radial chart of shifted and dilated circles.
    Chart {
        /// Circle radius.
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        /// `z0,z1,z2`: dilation and translation.
        #[arg(long, default_value = "0,0,0", allow_hyphen_values = true)]
        z: String,
        /// Samples along the circle.
        #[arg(long, default_value_t = 64)]
        mesh: usize,
    },
}

#[derive(Debug, Subcommand)]
enum ExamplesOp {
    /// Run the sweep or relation checks of a builtin problem.
    Run {
        /// Ex1, Ex2m1, Ex2m2 or Hyperbolic3D.
        name: String,
        /// Seed for the extra random starts.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of extra random starts.
        #[arg(long, default_value_t = 0)]
        random_starts: usize,
        /// Config whose `tolerances` replace the defaults; its problem is not used.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(path: &PathBuf) -> Result<ProblemConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn ode_problem(cfg: &ProblemConfig, cmd: &str) -> Result<config::OdeProblem, CliError> {
    match &cfg.problem {
        Problem::Ode(p) => Ok(p.clone()),
        other => Err(CliError::Config(format!("{cmd} needs a builtin or polynomial problem, got {}", other.kind()))),
    }
}

fn wave_problem(p: &WaveParams) -> Result<(WaveProblem, ResolvedTolerances, Option<Value>), CliError> {
    if let Some(path) = &p.config {
        let cfg = load(path)?;
        return match cfg.problem {
            Problem::Wave(w) => Ok((w, cfg.tolerances, Some(cfg.document))),
            other => Err(CliError::Config(format!("wave commands need a wave problem, got {}", other.kind()))),
        };
    }
    let a = p.a.ok_or_else(|| CliError::Config("--a or --config is required".into()))?;
    let raw = RawWave { a, sigma_kind: p.sigma.clone(), sigma_params: p.sigma_param.clone() };
    Ok((config::resolve_wave(&raw)?, ResolvedTolerances::default(), None))
}

fn ms_problem(p: &MsParams) -> Result<(MsConfig, ResolvedTolerances, Option<Value>), CliError> {
    if let Some(path) = &p.config {
        let cfg = load(path)?;
        return match cfg.problem {
            Problem::Ms(m) => Ok((m, cfg.tolerances, Some(cfg.document))),
            other => Err(CliError::Config(format!("ms commands need an ms problem, got {}", other.kind()))),
        };
    }
    let d = MsConfig::default();
    let m = MsConfig {
        r: p.r.unwrap_or(d.r),
        r_out: p.r_out.unwrap_or(d.r_out),
        k_max: p.k_max.unwrap_or(d.k_max),
        radial_grid: p.radial_grid.unwrap_or(d.radial_grid),
    };
    m.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok((m, ResolvedTolerances::default(), None))
}

fn pair(flag: &str, s: &str) -> Result<(f64, f64), CliError> {
    match parse_list(flag, s)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        v => Err(CliError::Config(format!("{flag}: expected two values, got {}", v.len()))),
    }
}

struct Prepared {
    name: &'static str,
    args: Value,
    document: Option<Value>,
    tolerances: ResolvedTolerances,
    seed: Option<u64>,
    output: Output,
}

fn run(command: Command) -> Result<Prepared, CliError> {
    let prepared = |name, args, document, tolerances, seed, output| Prepared { name, args, document, tolerances, seed, output };
    match command {
        Command::Classify { config } => {
            let cfg = load(&config)?;
            let p = ode_problem(&cfg, "classify")?;
            let out = commands::cmd_classify(&p, &cfg.tolerances)?;
            Ok(prepared("classify", json!({}), Some(cfg.document), cfg.tolerances, None, out))
        }
        Command::Simulate { config, u0, t_max, rho } => {
            let cfg = load(&config)?;
            let p = ode_problem(&cfg, "simulate")?;
            let u0 = parse_list("--u0", &u0)?;
            let out = commands::cmd_simulate(&p, &u0, t_max, rho, &cfg.tolerances)?;
            let args = json!({ "u0": u0, "t_max": t_max, "rho": rho });
            Ok(prepared("simulate", args, Some(cfg.document), cfg.tolerances, None, out))
        }
        Command::Wave { op } => match op {
            WaveOp::Find { params, bracket } => {
                let (wp, tol, doc) = wave_problem(&params)?;
                let bracket = pair("--bracket", &bracket)?;
                if !(bracket.0 >= 0.0 && bracket.1 > bracket.0) {
                    return Err(CliError::Config(format!("--bracket: need 0 ≤ lo < hi, got {bracket:?}")));
                }
                let out = commands::cmd_wave_find(&wp, &commands::WaveFindArgs { bracket }, &tol)?;
                let args = json!({ "a": wp.a, "sigma": wp.sigma.to_string(), "bracket": [bracket.0, bracket.1] });
                Ok(prepared("wave find", args, doc, tol, None, out))
            }
            WaveOp::Spectrum { params, l, n } => {
                let (wp, tol, doc) = wave_problem(&params)?;
                let out = commands::cmd_wave_spectrum(&wp, l, n, &tol)?;
                let args = json!({ "a": wp.a, "sigma": wp.sigma.to_string(), "l": l, "n": n });
                Ok(prepared("wave spectrum", args, doc, tol, None, out))
            }
            WaveOp::Simulate { params, amplitude, center, width, t_max, l, n } => {
                let (wp, tol, doc) = wave_problem(&params)?;
                if !(width > 0.0 && amplitude.is_finite() && center.is_finite()) || n < 10 || !(l > 0.0) {
                    return Err(CliError::Config("--width/--l/--n: need a positive width, L > 0 and N ≥ 10".into()));
                }
                let sim = commands::WaveSimArgs {
                    perturbation: Perturbation::Gaussian { amplitude, center, width },
                    t_max,
                    grid: SimGrid { l, n },
                };
                let out = commands::cmd_wave_simulate(&wp, &sim, &tol)?;
                let args = json!({ "a": wp.a, "sigma": wp.sigma.to_string(), "amplitude": amplitude, "center": center, "width": width, "t_max": t_max, "l": l, "n": n });
                Ok(prepared("wave simulate", args, doc, tol, None, out))
            }
        },
        Command::Ms { op } => match op {
            MsOp::Symbol { xi, strip_height, step, levels } => {
                let xi = parse_list("--xi", &xi)?;
                let out = commands::cmd_ms_symbol(&commands::SymbolArgs { xi: xi.clone(), strip_height, coarsest: step, levels })?;
                let args = json!({ "xi": xi, "strip_height": strip_height, "step": step, "levels": levels });
                Ok(prepared("ms symbol", args, None, ResolvedTolerances::default(), None, out))
            }
            MsOp::Modes { params } => {
                let (m, tol, doc) = ms_problem(&params)?;
                let out = commands::cmd_ms_modes(&m, &tol)?;
                let args = json!({ "r": m.r, "r_out": m.r_out, "k_max": m.k_max, "radial_grid": m.radial_grid });
                Ok(prepared("ms modes", args, doc, tol, None, out))
            }
            MsOp::Chart { r, z, mesh } => {
                let z = match parse_list("--z", &z)?.as_slice() {
                    [a, b, c] => [*a, *b, *c],
                    v => return Err(CliError::Config(format!("--z: expected three values, got {}", v.len()))),
                };
                let out = commands::cmd_ms_chart(r, z, mesh)?;
                Ok(prepared("ms chart", json!({ "r": r, "z": z, "mesh": mesh }), None, ResolvedTolerances::default(), None, out))
            }
        },
        Command::Examples { op: ExamplesOp::Run { name, seed, random_starts, config } } => {
            let kind: ExampleKind = name.parse().map_err(CliError::Config)?;
            let (tol, doc) = match &config {
                Some(path) => {
                    let cfg = load(path)?;
                    (cfg.tolerances, Some(cfg.document))
                }
                None => (ResolvedTolerances::default(), None),
            };
            let out = commands::cmd_examples_run(kind, &commands::ExampleArgs { seed, random_starts }, &tol)?;
            let args = json!({ "name": kind.name(), "seed": seed, "random_starts": random_starts });
            Ok(prepared("examples run", args, doc, tol, Some(seed), out))
        }
    }
}

/// Caps the global thread pool from `NORMSTAB_THREADS`.
fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("NORMSTAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("NORMSTAB_THREADS: expected a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(format!("NORMSTAB_THREADS: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| run(cli.command)).and_then(|p| {
        let report = RunReport {
            command: p.name.to_string(),
            config_hash: report::config_hash(p.name, &p.args, p.document.as_ref()),
            seed: p.seed,
            tolerances: p.tolerances.named(),
            result: p.output.result,
            series: p.output.series,
        };
        match &cli.out {
            Some(dir) => report.to_dir(dir),
            None => report.to_stdout(),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("normstab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
