//! Batch experiment runner behind the `pia` binary.
//!
//! A run reads one TOML file, executes one experiment, writes `report.json`
//! and `iterations.csv` to the output directory and returns an exit code:
//! 0 when every embedded check passes, 1 when a check fails, 2 for
//! configuration or I/O errors, 3 for numeric failures.

mod config;

pub use config::{
    CounterexampleConfig, ExperimentConfig, ExperimentKind, GridConfig, ProblemRef, QuadratureConfig, TimeGridConfig,
};

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::exec::init_workers;
use crate::feynman_kac::{grid_cross_check, CheckError, GridCheck};
use crate::hamiltonian::ActionQuadrature;
use crate::model::{ControlMode, Grid1D, Horizon, ModelError, TimeGrid};
use crate::pia::{
    pia_diffusion_1d, pia_finite_horizon, pia_infinite_horizon, IterationReport, PiaError, RateClass, RateFit,
};
use crate::problems::{benchmark_grid, counterexample_run, Audit, CounterexampleRun, ProblemKind, Registry, TrigProblem};

/// Largest tolerated decrease between iterates.
pub const MONOTONICITY_TOL: f64 = 1e-8;
/// Largest tolerated excess over the a-priori bound.
pub const BOUND_TOL: f64 = 1e-8;
/// Largest tolerated `v_xx` identity residual in diffusion runs.
pub const VXX_IDENTITY_TOL: f64 = 1e-9;
/// Relative tolerance of odd counterexample iterates against the oracle.
pub const ORACLE_REL_TOL: f64 = 0.02;
/// Absolute tolerance of even counterexample iterates (oracle 0).
pub const ORACLE_EVEN_TOL: f64 = 1e-3;
/// Relative tolerance of the consecutive-odd growth ratio.
pub const ODD_RATIO_TOL: f64 = 0.05;

const DEFAULT_OUTPUT_DIR: &str = "pia-output";
const DEFAULT_HORIZON: f64 = 1.0;
const DEFAULT_TIME_STEPS: usize = 50;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure{}: {message}", iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    Numeric { iteration: Option<usize>, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Numeric { .. } => 3,
        }
    }
}

impl From<PiaError> for CliError {
    fn from(e: PiaError) -> Self {
        let iteration = match &e {
            PiaError::Config(_) | PiaError::Regime(_) | PiaError::Model(_) => return CliError::Config(e.to_string()),
            PiaError::Pde { iteration, .. }
            | PiaError::Hamiltonian { iteration, .. }
            | PiaError::Ellipticity { iteration, .. } => Some(*iteration),
            PiaError::NoConvergence { iterations, .. } => Some(*iterations),
        };
        CliError::Numeric { iteration, message: e.to_string() }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Command-line and environment overrides; they win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

/// One embedded acceptance check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }

    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self::new(name, value <= limit, format!("{value:e} <= {limit:e}"))
    }

    fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self::new(name, value >= limit, format!("{value:e} >= {limit:e}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedAudit {
    pub name: String,
    pub audit: Audit,
}

/// Wall-clock times; the only fields of a report that vary between runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub iteration_seconds: Vec<f64>,
}

/// Everything a run produced, as written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    /// The configuration with every default filled in.
    pub config: ExperimentConfig,
    pub problem: Option<TrigProblem>,
    pub iterations: Option<IterationReport>,
    pub counterexample: Option<CounterexampleRun>,
    pub mc: Option<GridCheck>,
    pub audits: Vec<NamedAudit>,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub artifacts: Vec<PathBuf>,
    pub timings: Timings,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Problem data after resolving names and defaults.
struct Resolved {
    config: ExperimentConfig,
    problem: Option<TrigProblem>,
    grid: Grid1D,
    quad: Option<ActionQuadrature>,
}

fn need_rho(config: &ExperimentConfig) -> Result<f64, CliError> {
    match config.rho {
        Some(r) if r > 0.0 && r.is_finite() => Ok(r),
        Some(r) => Err(CliError::Config(format!("rho must be positive, got {r}"))),
        None => Err(CliError::Config(format!("rho is required for {:?}", config.experiment))),
    }
}

fn reject(present: bool, key: &str, kind: ExperimentKind) -> Result<(), CliError> {
    if present {
        return Err(CliError::Config(format!("key {key:?} does not apply to experiment {kind:?}")));
    }
    Ok(())
}

fn resolve(mut config: ExperimentConfig, overrides: &Overrides, registry: &Registry) -> Result<Resolved, CliError> {
    use ExperimentKind::*;
    let kind = config.experiment;
    if let Some(dir) = &overrides.output_dir {
        config.output_dir = Some(dir.clone());
    }
    config.output_dir.get_or_insert_with(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    if let Some(seed) = overrides.seed {
        config.mc.seed = seed;
    }
    if let Some(w) = overrides.workers {
        config.workers = w;
    }
    config.pia.validate()?;
    if !(config.lambda > 0.0 && config.lambda.is_finite()) {
        return Err(CliError::Config(format!("lambda must be positive, got {}", config.lambda)));
    }
    if kind == McValidate {
        config.mc.validate().map_err(|e| CliError::Config(e.to_string()))?;
    }

    reject(config.horizon.is_some() && kind != PiaFinite, "horizon", kind)?;
    reject(config.tgrid.is_some() && kind != PiaFinite, "tgrid", kind)?;
    reject(config.rho.is_some() && matches!(kind, PiaFinite | Audit), "rho", kind)?;
    if matches!(kind, PiaInfinite | PiaDiffusion | McValidate | Counterexample) {
        need_rho(&config)?;
    }
    if kind == PiaFinite {
        let h = *config.horizon.get_or_insert(DEFAULT_HORIZON);
        if !(h > 0.0 && h.is_finite()) {
            return Err(CliError::Config(format!("horizon must be positive, got {h}")));
        }
        config.tgrid.get_or_insert(TimeGridConfig { n_steps: DEFAULT_TIME_STEPS });
    }

    if kind == Counterexample {
        match &config.problem {
            None => config.problem = Some(ProblemRef::Named("counterexample".into())),
            Some(ProblemRef::Named(n)) if n == "counterexample" => {}
            Some(_) => return Err(CliError::Config("the counterexample experiment takes no other problem".into())),
        }
        reject(config.quadrature.is_some(), "quadrature", kind)?;
        let spec = registry.get("counterexample").map_err(|e| CliError::Config(e.to_string()))?;
        let grid = config.grid.map_or(Ok(spec.grid), |g| g.build())?;
        config.grid = Some(grid.into());
        return Ok(Resolved { config, problem: None, grid, quad: None });
    }
    if kind == Audit && config.problem.is_none() {
        reject(config.grid.is_some() || config.quadrature.is_some(), "grid/quadrature", kind)?;
        return Ok(Resolved { config, problem: None, grid: benchmark_grid(), quad: None });
    }

    let (problem, grid, nodes) = match &config.problem {
        None => return Err(CliError::Config(format!("problem is required for {kind:?}"))),
        Some(ProblemRef::Named(name)) => {
            let spec = registry.get(name).map_err(|e| CliError::Config(e.to_string()))?;
            match &spec.kind {
                ProblemKind::Control(p) => (*p, spec.grid, spec.quadrature_nodes),
                ProblemKind::Counterexample => {
                    return Err(CliError::Config(format!("{name} only runs as the counterexample experiment")))
                }
            }
        }
        Some(ProblemRef::Inline(p)) => (*p, benchmark_grid(), ActionQuadrature::DEFAULT_NODES),
    };
    let wanted = match kind {
        PiaDiffusion => Some(ControlMode::DiffusionControl1D),
        PiaFinite | PiaInfinite | McValidate => Some(ControlMode::DriftControl),
        _ => None,
    };
    if let Some(mode) = wanted {
        if problem.mode != mode {
            return Err(CliError::Config(format!("{kind:?} needs a problem in mode {mode:?}, got {:?}", problem.mode)));
        }
    }
    let grid = config.grid.map_or(Ok(grid), |g| g.build())?;
    config.grid = Some(grid.into());
    let q = *config.quadrature.get_or_insert(QuadratureConfig { nodes, panels: 1 });
    let quad = ActionQuadrature::composite(problem.action_lo, problem.action_hi, q.nodes, q.panels)
        .map_err(|e| CliError::Config(format!("quadrature: {e}")))?;
    Ok(Resolved { config, problem: Some(problem), grid, quad: Some(quad) })
}

fn pia_checks(report: &IterationReport, stop_tol: f64) -> Vec<Check> {
    let mut checks = vec![
        Check::at_least("monotonicity", report.worst_monotonicity(), -MONOTONICITY_TOL),
        Check::at_most("a_priori_bound", report.worst_bound_violation(), BOUND_TOL),
        Check::at_most("converged", report.last_delta().unwrap_or(f64::INFINITY), stop_tol),
    ];
    let class = report.summary.eps1.map(|f| f.classification);
    checks.push(Check::new("rate_not_divergent", class != Some(RateClass::Divergent), format!("eps1 rate {class:?}")));
    if let Some(v) = report.worst_vxx_identity() {
        checks.push(Check::at_most("vxx_identity", v, VXX_IDENTITY_TOL));
    }
    checks
}

/// Worst relative deviation of consecutive-odd `|v_x(0)|` ratios from `(rho + 1/2)^-2`.
pub fn odd_ratio_deviation(run: &CounterexampleRun) -> f64 {
    let expected = (run.rho + 0.5).powi(-2);
    let odd: Vec<f64> = run.vx0.iter().skip(1).step_by(2).map(|v| v.abs()).collect();
    odd.windows(2).map(|w| (w[1] / w[0] / expected - 1.0).abs()).fold(0.0, f64::max)
}

fn counterexample_checks(run: &CounterexampleRun) -> Vec<Check> {
    let odd = run.oracle_error.iter().enumerate().filter(|(n, _)| n % 2 == 1).filter_map(|(_, e)| *e);
    let even = run.oracle_error.iter().enumerate().filter(|(n, _)| n % 2 == 0).filter_map(|(_, e)| *e);
    let mut checks = vec![
        Check::at_most("oracle_odd_relative", odd.fold(0.0, f64::max), ORACLE_REL_TOL),
        Check::at_most("oracle_even_absolute", even.fold(0.0, f64::max), ORACLE_EVEN_TOL),
    ];
    if run.vx0.len() >= 6 {
        checks.push(Check::at_most("odd_ratio", odd_ratio_deviation(run), ODD_RATIO_TOL));
    }
    let class = run.odd_rate.map(|f: RateFit| f.classification);
    if run.rho < 0.5 {
        checks.push(Check::new("divergent", class == Some(RateClass::Divergent), format!("{class:?}")));
    } else if run.rho > 0.5 {
        checks.push(Check::new("not_divergent", class != Some(RateClass::Divergent), format!("{class:?}")));
    }
    checks
}

fn write_file(path: &Path, f: impl FnOnce(&mut io::BufWriter<fs::File>) -> io::Result<()>) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = io::BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn strip_timings(report: &mut IterationReport) -> Vec<f64> {
    report.total_seconds = 0.0;
    report.records.iter_mut().map(|r| std::mem::take(&mut r.seconds)).collect()
}

/// Runs a parsed configuration and writes its artifacts.
pub fn run_config(config: ExperimentConfig, overrides: &Overrides) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let registry = Registry::with_defaults();
    let Resolved { config, problem, grid, quad } = resolve(config, overrides, &registry)?;
    init_workers(config.workers);
    let exec = config.execution;
    let mut pia = config.pia;
    pia.execution = exec;
    let lambda = config.lambda;
    log::info!("running {:?} on {} nodes", config.experiment, grid.n_nodes());

    let mut iterations = None;
    let mut counterexample = None;
    let mut mc = None;
    let mut audits = Vec::new();
    let mut checks = Vec::new();
    let build = |horizon| -> Result<_, CliError> { Ok(problem.expect("resolved").build(horizon, lambda)?) };

    match config.experiment {
        ExperimentKind::PiaFinite => {
            let horizon = config.horizon.expect("resolved");
            let p = build(Horizon::Finite { horizon })?;
            let tgrid = TimeGrid::new(horizon, config.tgrid.expect("resolved").n_steps)?;
            let run = pia_finite_horizon(&p, &grid, &tgrid, quad.as_ref().expect("resolved"), &pia)?;
            checks = pia_checks(&run.report, pia.stop_tol);
            iterations = Some(run.report);
        }
        ExperimentKind::PiaInfinite | ExperimentKind::McValidate => {
            let p = build(Horizon::Discounted { discount: config.rho.expect("resolved") })?;
            let q = quad.as_ref().expect("resolved");
            let run = pia_infinite_horizon(&p, &grid, q, &pia)?;
            checks = pia_checks(&run.report, pia.stop_tol);
            iterations = Some(run.report);
            if config.experiment == ExperimentKind::McValidate {
                let check = grid_cross_check(&p, &grid, q, &config.mc, exec).map_err(|e| match e {
                    CheckError::Pia(p) => CliError::from(p),
                    other => CliError::Config(other.to_string()),
                })?;
                for pr in &check.probes {
                    checks.push(Check::new(
                        &format!("mc_value[x={}]", pr.x0),
                        pr.value_ok,
                        format!("|{:?} - {:?}| <= {:e}", pr.mc_value.mean, pr.grid_value, pr.value_budget),
                    ));
                    checks.push(Check::new(
                        &format!("mc_gradient[x={}]", pr.x0),
                        pr.gradient_ok,
                        format!("|{:?} - {:?}| <= {:e}", pr.mc_gradient.mean, pr.grid_gradient, pr.gradient_budget),
                    ));
                }
                mc = Some(check);
            }
        }
        ExperimentKind::PiaDiffusion => {
            let p = build(Horizon::Discounted { discount: config.rho.expect("resolved") })?;
            let run = pia_diffusion_1d(&p, &grid, quad.as_ref().expect("resolved"), &pia)?;
            checks = pia_checks(&run.report, pia.stop_tol);
            iterations = Some(run.report);
        }
        ExperimentKind::Counterexample => {
            let run = counterexample_run(config.rho.expect("resolved"), &grid, config.counterexample.n_iter)
                .map_err(|e| CliError::Numeric { iteration: None, message: e.to_string() })?;
            checks = counterexample_checks(&run);
            iterations = Some(run.report.clone());
            counterexample = Some(run);
        }
        ExperimentKind::Audit => {
            let list: Vec<(String, TrigProblem)> = match (&config.problem, problem) {
                (Some(ProblemRef::Named(n)), Some(p)) => vec![(n.clone(), p)],
                (_, Some(p)) => vec![("inline".into(), p)],
                (_, None) => registry
                    .entries()
                    .iter()
                    .filter_map(|e| e.control().ok().map(|p| (e.name.clone(), *p)))
                    .collect(),
            };
            for (name, p) in list {
                let audit = p.audit();
                checks.push(Check::new(&format!("audit[{name}]"), audit.passed, audit.notes.join("; ")));
                audits.push(NamedAudit { name, audit });
            }
        }
    }

    let out_dir = config.output_dir.clone().expect("resolved");
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let csv_path = out_dir.join("iterations.csv");
    let json_path = out_dir.join("report.json");
    let mut artifacts = vec![json_path.clone(), csv_path.clone()];

    let extra = counterexample.as_ref().map(|c| c.csv_columns()).unwrap_or_default();
    write_file(&csv_path, |w| match &iterations {
        Some(r) => r.write_csv(w, &extra, config.csv_timings),
        None => writeln!(w, "{}", crate::pia::CSV_HEADER.join(",")),
    })?;
    if let Some(check) = &mc {
        let probes_path = out_dir.join("probes.csv");
        write_file(&probes_path, |w| {
            writeln!(w, "x0,grid_value,mc_value,mc_value_se,value_ok,grid_gradient,mc_gradient,mc_gradient_se,gradient_ok")?;
            for p in &check.probes {
                writeln!(
                    w,
                    "{:?},{:?},{:?},{:?},{},{:?},{:?},{:?},{}",
                    p.x0,
                    p.grid_value,
                    p.mc_value.mean,
                    p.mc_value.std_error,
                    p.value_ok,
                    p.grid_gradient,
                    p.mc_gradient.mean,
                    p.mc_gradient.std_error,
                    p.gradient_ok
                )?;
            }
            Ok(())
        })?;
        artifacts.push(probes_path);
    }

    let iteration_seconds = iterations.as_mut().map(strip_timings).unwrap_or_default();
    if let Some(c) = counterexample.as_mut() {
        strip_timings(&mut c.report);
    }
    let passed = checks.iter().all(|c| c.passed);
    let report = RunReport {
        config,
        problem,
        iterations,
        counterexample,
        mc,
        audits,
        checks,
        passed,
        artifacts,
        timings: Timings { total_seconds: start.elapsed().as_secs_f64(), iteration_seconds },
    };
    write_file(&json_path, |w| {
        serde_json::to_writer_pretty(&mut *w, &report).map_err(io::Error::other)?;
        writeln!(w)
    })?;
    Ok(report)
}

/// Reads, validates and runs a configuration file.
pub fn run(config_path: &Path, overrides: &Overrides) -> Result<RunReport, CliError> {
    let text = fs::read_to_string(config_path).map_err(io_err(config_path))?;
    let config = ExperimentConfig::from_toml(&text)
        .map_err(|e| CliError::Config(format!("{}: {}", config_path.display(), e)))?;
    run_config(config, overrides)
}

/// Prints the registry with audit status.
pub fn list_problems<W: Write>(registry: &Registry, out: &mut W) -> io::Result<()> {
    registry.list(out)
}
