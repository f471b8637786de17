//! Named reference problems and the Picard divergence counterexample.
//!
//! Benchmarks come from one trigonometric family:
//!
//! ```text
//! b(x,a)     = beta_a a shape(x) + beta_s sin x       shape = tanh or sech
//! sigma(x,a) = sigma_0 + sigma_a sin(a) sech x
//! r(x,a)     = -kappa a^2 / 2 + gamma cos x
//! g(x)       = gamma_g sech x
//! ```

use std::f64::consts::PI;
use std::io::{self, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hamiltonian::ActionQuadrature;
use crate::model::{norms, Boundary, ControlMode, ControlProblem, Grid1D, ModelError, ValueField};
use crate::pde::{solve_elliptic, LinearPdeCoefficients, PdeError};
use crate::pia::{fit_rate_indexed, IterationRecord, IterationReport, RateFit, RateSummary, RegimeKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("unknown problem {0:?}")]
    Unknown(String),
    #[error("{0} is not a control problem")]
    NotControl(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pde(#[from] PdeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftShape {
    Tanh,
    Sech,
}

/// Parameters of the trigonometric family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigProblem {
    pub drift_action: f64,
    pub drift_shape: DriftShape,
    pub drift_sin: f64,
    pub sigma0: f64,
    pub sigma_action: f64,
    pub reward_action: f64,
    pub reward_cos: f64,
    #[serde(default)]
    pub terminal_sech: f64,
    pub action_lo: f64,
    pub action_hi: f64,
    pub coefficient_bound: f64,
    pub sigma_min: f64,
    pub mode: ControlMode,
}

fn sech(x: f64) -> f64 {
    1.0 / x.cosh()
}

impl TrigProblem {
    pub fn drift(&self, x: f64, a: f64) -> f64 {
        let shape = match self.drift_shape {
            DriftShape::Tanh => x.tanh(),
            DriftShape::Sech => sech(x),
        };
        self.drift_action * a * shape + self.drift_sin * x.sin()
    }

    pub fn sigma(&self, x: f64, a: f64) -> f64 {
        self.sigma0 + self.sigma_action * a.sin() * sech(x)
    }

    pub fn reward(&self, x: f64, a: f64) -> f64 {
        -0.5 * self.reward_action * a * a + self.reward_cos * x.cos()
    }

    pub fn terminal(&self, x: f64) -> f64 {
        self.terminal_sech * sech(x)
    }

    /// Control problem with discount `rho` (or horizon `T`) and temperature `lambda`.
    pub fn build(&self, horizon: crate::model::Horizon, lambda: f64) -> Result<ControlProblem, ModelError> {
        let p = *self;
        let builder = ControlProblem::builder()
            .drift(move |x, a| p.drift(x, a))
            .diffusion(move |x, a| p.sigma(x, a))
            .running_reward(move |x, a| p.reward(x, a))
            .terminal_reward(move |x| p.terminal(x))
            .actions(p.action_lo, p.action_hi)
            .temperature(lambda)
            .coefficient_bound(p.coefficient_bound)
            .sigma_min(p.sigma_min)
            .mode(p.mode);
        match horizon {
            crate::model::Horizon::Finite { horizon } => builder.finite_horizon(horizon),
            crate::model::Horizon::Discounted { discount } => builder.discount(discount),
        }
        .build()
    }

    /// Numeric sweep of the declared bounds.
    pub fn audit(&self) -> Audit {
        const XS: usize = 401;
        const AS: usize = 64;
        const STEP: f64 = 1e-4;
        let c0 = self.coefficient_bound;
        let mut a = Audit { passed: true, max_coefficient: 0.0, min_sigma: f64::INFINITY, sigma_tail: 0.0, notes: vec![] };
        let d = |f: &dyn Fn(f64) -> f64, x: f64| {
            let (l, c, r) = (f(x - STEP), f(x), f(x + STEP));
            [c, (r - l) / (2.0 * STEP), (r - 2.0 * c + l) / (STEP * STEP)]
        };
        for i in 0..XS {
            let x = -10.0 + 20.0 * i as f64 / (XS - 1) as f64;
            for v in d(&|x| self.terminal(x), x) {
                a.max_coefficient = a.max_coefficient.max(v.abs());
            }
            for j in 0..AS {
                let act = self.action_lo + (self.action_hi - self.action_lo) * j as f64 / (AS - 1) as f64;
                for f in [
                    &(|x| self.drift(x, act)) as &dyn Fn(f64) -> f64,
                    &|x| self.sigma(x, act),
                    &|x| self.reward(x, act),
                ] {
                    for v in d(f, x) {
                        a.max_coefficient = a.max_coefficient.max(v.abs());
                    }
                }
                let s = self.sigma(x, act);
                a.min_sigma = a.min_sigma.min(s);
                a.sigma_tail = a.sigma_tail.max((s - self.sigma0).abs() / sech(x));
            }
        }
        if a.max_coefficient > c0 * (1.0 + 1e-6) {
            a.passed = false;
            a.notes.push(format!("coefficient or derivative {:.4} exceeds C0 = {c0}", a.max_coefficient));
        }
        if a.min_sigma < self.sigma_min {
            a.passed = false;
            a.notes.push(format!("sigma {:.4} below sigma_min = {}", a.min_sigma, self.sigma_min));
        }
        a
    }
}

/// Outcome of [`TrigProblem::audit`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Audit {
    pub passed: bool,
    /// Largest `|phi|, |phi_x|, |phi_xx|` over coefficients and samples.
    pub max_coefficient: f64,
    pub min_sigma: f64,
    /// `sup |sigma(x,a) - sigma_0| / sech x`, the constant of the tail decay.
    pub sigma_tail: f64,
    pub notes: Vec<String>,
}

/// Drift control, `b = a tanh x + 0.2 sin x`, `sigma = 1`, `r = -a^2/2 + cos x`, `g = sech x`.
pub fn smooth_benchmark() -> TrigProblem {
    TrigProblem {
        drift_action: 1.0,
        drift_shape: DriftShape::Tanh,
        drift_sin: 0.2,
        sigma0: 1.0,
        sigma_action: 0.0,
        reward_action: 1.0,
        reward_cos: 1.0,
        terminal_sech: 1.0,
        action_lo: -1.0,
        action_hi: 1.0,
        coefficient_bound: 2.0,
        sigma_min: 1.0,
        mode: ControlMode::DriftControl,
    }
}

/// Diffusion control, `b = a sech x`, `sigma = 1 + 0.4 sin(a) sech x`, `r = -a^2/2 + cos x`.
pub fn diffusion_benchmark() -> TrigProblem {
    TrigProblem {
        drift_action: 1.0,
        drift_shape: DriftShape::Sech,
        drift_sin: 0.0,
        sigma0: 1.0,
        sigma_action: 0.4,
        reward_action: 1.0,
        reward_cos: 1.0,
        terminal_sech: 0.0,
        action_lo: -1.0,
        action_hi: 1.0,
        coefficient_bound: 2.0,
        sigma_min: 0.6,
        mode: ControlMode::DiffusionControl1D,
    }
}

/// Grid used for the benchmarks: `[-8, 8]`, 321 nodes, reflecting ends.
pub fn benchmark_grid() -> Grid1D {
    Grid1D::new(-8.0, 8.0, 321, Boundary::Reflecting).expect("valid grid")
}

/// Periodic `[0, 2 pi)` grid for the counterexample.
pub fn counterexample_grid(n_nodes: usize) -> Result<Grid1D, ModelError> {
    Grid1D::new(0.0, 2.0 * PI, n_nodes, Boundary::Periodic)
}

/// Picard iteration `rho v^n = v^n_xx / 2 + v^(n-1)_x` from `v^0 = -cos x`.
/// Returns `v^0, .., v^n_iter`.
pub fn counterexample_picard(rho: f64, grid: &Grid1D, n_iter: usize) -> Result<Vec<ValueField>, ProblemError> {
    if grid.boundary() != Boundary::Periodic {
        return Err(ModelError::InvalidGrid("counterexample needs a periodic grid".into()).into());
    }
    let n = grid.n_nodes();
    let mut out = vec![ValueField::from_fn(*grid, |x| -x.cos())?];
    for _ in 0..n_iter {
        let source = out.last().expect("nonempty").dx().to_vec();
        let coeffs = LinearPdeCoefficients::new(vec![0.5; n], vec![0.0; n], source, rho)?;
        out.push(solve_elliptic(&coeffs, grid)?);
    }
    Ok(out)
}

/// `v^n_x(0)` of the continuous iteration: 0 for even `n`,
/// `(-1)^((n-1)/2) (rho + 1/2)^(-n)` for odd `n`.
pub fn counterexample_oracle(rho: f64, n: usize) -> f64 {
    if n.is_multiple_of(2) {
        return 0.0;
    }
    let sign = if ((n - 1) / 2).is_multiple_of(2) { 1.0 } else { -1.0 };
    sign * (rho + 0.5).powi(-(n as i32))
}

/// Fourier coefficients `(A, B)` of `v^n = A cos x + B sin x` for the continuous iteration.
pub fn counterexample_fourier(rho: f64, n: usize) -> (f64, f64) {
    let (mut a, mut b) = (-1.0, 0.0);
    for _ in 0..n {
        // v_x = -A sin + B cos solves into (-A sin + B cos) / (rho + 1/2)
        let k = rho + 0.5;
        (a, b) = (b / k, -a / k);
    }
    (a, b)
}

/// Picard run of the counterexample with its oracle comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterexampleRun {
    pub rho: f64,
    /// Distances to the exact solution `v = 0`.
    #[serde(skip)]
    pub report: IterationReport,
    /// Grid `v^n_x(0)`.
    pub vx0: Vec<f64>,
    /// Continuous `v^n_x(0)`.
    pub oracle: Vec<f64>,
    /// `|grid - oracle| / |oracle|` at odd `n`; absolute difference at even `n > 0`.
    pub oracle_error: Vec<Option<f64>>,
    /// Fit of `|v^n_x(0)|` over odd `n`, indexed by `n`.
    pub odd_rate: Option<RateFit>,
}

impl CounterexampleRun {
    /// Extra CSV columns: grid and oracle `v_x(0)` and their discrepancy.
    pub fn csv_columns(&self) -> Vec<(&'static str, Vec<Option<f64>>)> {
        vec![
            ("vx0", self.vx0.iter().copied().map(Some).collect()),
            ("oracle_vx0", self.oracle.iter().copied().map(Some).collect()),
            ("oracle_error", self.oracle_error.clone()),
        ]
    }
}

/// Runs [`counterexample_picard`] and tabulates it like a policy-iteration run.
pub fn counterexample_run(rho: f64, grid: &Grid1D, n_iter: usize) -> Result<CounterexampleRun, ProblemError> {
    let start = Instant::now();
    let iterates = counterexample_picard(rho, grid, n_iter)?;
    let zero = ValueField::constant(*grid, 0.0)?;
    let mut records = Vec::with_capacity(iterates.len());
    for (n, v) in iterates.iter().enumerate() {
        let prev = n.checked_sub(1).map(|k| &iterates[k]);
        let delta = prev.map(|p| norms(v, p)).transpose()?;
        let residual = (0..grid.n_nodes())
            .map(|i| (rho * v.values()[i] - 0.5 * v.dxx()[i] - v.dx()[i]).abs())
            .fold(0.0, f64::max);
        records.push(IterationRecord {
            n,
            eps: norms(v, &zero)?,
            delta,
            policy_delta: None,
            monotonicity_violation: prev
                .map(|p| v.values().iter().zip(p.values()).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min)),
            bound_violation: f64::NEG_INFINITY,
            residual,
            vxx_identity: None,
            seconds: 0.0,
        });
    }
    let origin = grid.nearest_node(0.0);
    let vx0: Vec<f64> = iterates.iter().map(|v| v.dx()[origin]).collect();
    let oracle: Vec<f64> = (0..iterates.len()).map(|n| if n == 0 { 0.0 } else { counterexample_oracle(rho, n) }).collect();
    let oracle_error = (0..iterates.len())
        .map(|n| match n {
            0 => None,
            n if n % 2 == 1 => Some(((vx0[n] - oracle[n]) / oracle[n]).abs()),
            n => Some(vx0[n].abs()),
        })
        .collect();
    let odd: Vec<(f64, f64)> = (1..iterates.len()).step_by(2).map(|n| (n as f64, vx0[n].abs())).collect();
    let odd_rate = fit_rate_indexed(&odd).ok();
    let summary = RateSummary::from_records(&records, 0.0, 0.0);
    let report = IterationReport {
        regime: RegimeKind::Counterexample,
        grid: *grid,
        time_grid: None,
        records,
        summary,
        converged: false,
        reference_iterations: 0,
        reference_delta: 0.0,
        reference_hjb_residual: 0.0,
        total_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(CounterexampleRun { rho, report, vx0, oracle, oracle_error, odd_rate })
}

/// What a registry entry instantiates.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemKind {
    Control(TrigProblem),
    Counterexample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub name: String,
    pub description: String,
    pub kind: ProblemKind,
    pub grid: Grid1D,
    pub quadrature_nodes: usize,
}

impl ProblemSpec {
    pub fn control(&self) -> Result<&TrigProblem, ProblemError> {
        match &self.kind {
            ProblemKind::Control(p) => Ok(p),
            ProblemKind::Counterexample => Err(ProblemError::NotControl(self.name.clone())),
        }
    }

    pub fn quadrature(&self) -> Result<ActionQuadrature, ProblemError> {
        let p = self.control()?;
        ActionQuadrature::gauss_legendre(p.action_lo, p.action_hi, self.quadrature_nodes)
            .map_err(|e| ModelError::InvalidProblem(e.to_string()).into())
    }

    /// Audit result; the counterexample has no declared bounds to check.
    pub fn audit(&self) -> Option<Audit> {
        match &self.kind {
            ProblemKind::Control(p) => Some(p.audit()),
            ProblemKind::Counterexample => None,
        }
    }
}

/// Immutable name-to-spec table.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: Vec<ProblemSpec>,
}

impl Registry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_defaults() -> Self {
        let grid = benchmark_grid();
        let mut r = Self::empty();
        r.register(ProblemSpec {
            name: "smooth_benchmark".into(),
            description: "drift control, b = a tanh x + 0.2 sin x, sigma = 1, r = -a^2/2 + cos x, g = sech x".into(),
            kind: ProblemKind::Control(smooth_benchmark()),
            grid,
            quadrature_nodes: ActionQuadrature::DEFAULT_NODES,
        });
        r.register(ProblemSpec {
            name: "diffusion_benchmark".into(),
            description: "diffusion control, b = a sech x, sigma = 1 + 0.4 sin(a) sech x, r = -a^2/2 + cos x".into(),
            kind: ProblemKind::Control(diffusion_benchmark()),
            grid,
            quadrature_nodes: ActionQuadrature::DEFAULT_NODES,
        });
        r.register(ProblemSpec {
            name: "counterexample".into(),
            description: "Picard iteration rho v = v_xx/2 + v_x(prev) from -cos x on [0, 2 pi)".into(),
            kind: ProblemKind::Counterexample,
            grid: counterexample_grid(512).expect("valid grid"),
            quadrature_nodes: 0,
        });
        r
    }

    /// Adds or replaces an entry.
    pub fn register(&mut self, spec: ProblemSpec) {
        self.entries.retain(|e| e.name != spec.name);
        self.entries.push(spec);
    }

    pub fn get(&self, name: &str) -> Result<&ProblemSpec, ProblemError> {
        self.entries.iter().find(|e| e.name == name).ok_or_else(|| ProblemError::Unknown(name.into()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn entries(&self) -> &[ProblemSpec] {
        &self.entries
    }

    /// Tab-separated listing with audit status.
    pub fn list<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "name\taudit\tdescription")?;
        for e in &self.entries {
            let status = match e.audit() {
                None => "n/a".to_string(),
                Some(a) if a.passed => "ok".to_string(),
                Some(a) => format!("FAILED ({})", a.notes.join("; ")),
            };
            writeln!(out, "{}\t{}\t{}", e.name, status, e.description)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn oracle_values() {
        assert_relative_eq!(counterexample_oracle(1.0, 1), 2.0 / 3.0, max_relative = 1e-15);
        assert_eq!(counterexample_oracle(1.0, 4), 0.0);
        assert_relative_eq!(counterexample_oracle(1.0, 3), -8.0 / 27.0, max_relative = 1e-15);
        assert_relative_eq!(counterexample_oracle(0.25, 5), 0.75f64.powi(-5), max_relative = 1e-15);
    }

    #[test]
    fn fourier_recursion_matches_oracle() {
        for rho in [0.25, 1.0, 3.0] {
            for n in 0..10 {
                // v_x(0) = B
                let (_, b) = counterexample_fourier(rho, n);
                let expected = if n == 0 { 0.0 } else { counterexample_oracle(rho, n) };
                assert!((b - expected).abs() <= 1e-14 * (1.0 + expected.abs()), "rho={rho} n={n}");
            }
        }
    }

    #[test]
    fn default_registry_contents() {
        let r = Registry::with_defaults();
        let names: Vec<_> = r.names().collect();
        assert_eq!(names, ["smooth_benchmark", "diffusion_benchmark", "counterexample"]);
        assert!(r.get("nope").is_err());
        assert!(r.get("counterexample").unwrap().control().is_err());
    }

    #[test]
    fn benchmarks_pass_audits() {
        let s = smooth_benchmark().audit();
        assert!(s.passed, "{:?}", s.notes);
        let d = diffusion_benchmark().audit();
        assert!(d.passed, "{:?}", d.notes);
        assert!(d.sigma_tail <= 0.4 + 1e-12);
        assert!(d.min_sigma >= 0.6);
    }

    #[test]
    fn failing_audit_is_flagged_in_listing() {
        let mut r = Registry::empty();
        let mut out = Vec::new();
        r.list(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "name\taudit\tdescription\n");

        let mut bad = smooth_benchmark();
        bad.coefficient_bound = 0.5;
        r.register(ProblemSpec {
            name: "bad".into(),
            description: "too small C0".into(),
            kind: ProblemKind::Control(bad),
            grid: benchmark_grid(),
            quadrature_nodes: 8,
        });
        let mut out = Vec::new();
        r.list(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().contains("bad\tFAILED"));
    }
}
