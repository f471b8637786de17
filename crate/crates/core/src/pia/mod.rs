//! Policy iteration in three regimes, with per-iteration diagnostics.
//!
//! Each iteration freezes the Gibbs policy of the previous value iterate
//! and solves the resulting linear equation. Errors are measured against a
//! discrete reference: the same iteration continued until successive
//! iterates agree to `reference_tol`.

mod rate;
mod regimes;
mod report;

pub use rate::{
    fit_rate, fit_rate_floored, fit_rate_indexed, i_eps, RateClass, RateError, RateFit, DIVERGENCE_GROWTH,
    EXPONENTIAL_R2, RELATIVE_FLOOR, SUPER_SLOPE_MIN,
};
pub use regimes::{frozen_coefficients, hjb_residual, policy_from_field, policy_from_space_time};
pub use report::{IterationRecord, IterationReport, RateSummary, Regime as RegimeKind, CSV_HEADER};

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::hamiltonian::{ActionQuadrature, HamiltonianError};
use crate::model::{DiscreteNorms, Grid1D, ModelError, SpaceTimeField, TimeGrid, ValueField};
use crate::pde::PdeError;

/// Multiple of `eps_mach * |v|` taken as the noise level of grid values.
const ROUNDOFF_FACTOR: f64 = 100.0;
/// Increments below `STALL_FACTOR * eps_mach * |v| / h^2` are roundoff in the
/// second difference; iteration stops there even if `tol` is smaller.
const STALL_FACTOR: f64 = 10.0;

use regimes::{DiffusionRegime, FiniteRegime, InfiniteRegime, Regime};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PiaError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("problem does not fit this regime: {0}")]
    Regime(String),
    #[error("iteration {iteration}: {source}")]
    Pde {
        iteration: usize,
        #[source]
        source: PdeError,
    },
    #[error("iteration {iteration}: {source}")]
    Hamiltonian {
        iteration: usize,
        #[source]
        source: HamiltonianError,
    },
    #[error("iteration {iteration}: second-order coefficient {value} below sigma_min^2/2 at node {node}")]
    Ellipticity { iteration: usize, node: usize, value: f64 },
    #[error("no convergence to {tol:e} within {iterations} iterations (last delta {last:e})")]
    NoConvergence { tol: f64, iterations: usize, last: f64, deltas: Vec<f64> },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Iteration controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PiaConfig {
    pub max_iter: usize,
    /// Stop once `|v^n - v^(n-1)|` in the discrete `C^2` norm is at most this.
    pub stop_tol: f64,
    /// Tolerance of the reference run.
    pub reference_tol: f64,
    /// Keep every policy iterate instead of only the latest.
    pub record_policies: bool,
    /// Absolute resolution floor for rate fitting; derived from the grid when absent.
    pub rate_floor: Option<f64>,
    /// Set programmatically; configuration files choose it at the top level.
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for PiaConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            stop_tol: 1e-10,
            reference_tol: 1e-12,
            record_policies: false,
            rate_floor: None,
            execution: Execution::default(),
        }
    }
}

impl PiaConfig {
    pub fn validate(&self) -> Result<(), PiaError> {
        if self.max_iter == 0 {
            return Err(PiaError::Config("max_iter must be at least 1".into()));
        }
        if !(self.reference_tol > 0.0 && self.stop_tol > 0.0) {
            return Err(PiaError::Config("tolerances must be positive".into()));
        }
        if self.reference_tol > self.stop_tol {
            return Err(PiaError::Config(format!(
                "reference_tol {} exceeds stop_tol {}",
                self.reference_tol, self.stop_tol
            )));
        }
        if let Some(f) = self.rate_floor {
            if !(f >= 0.0) {
                return Err(PiaError::Config("rate_floor must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// Normalized Gibbs log-densities on `points x actions`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyField {
    pub n_points: usize,
    pub n_actions: usize,
    pub log_density: Vec<f64>,
}

impl PolicyField {
    /// `ln pi` at grid point `p` (time-major for space-time policies).
    pub fn at(&self, p: usize) -> &[f64] {
        &self.log_density[p * self.n_actions..(p + 1) * self.n_actions]
    }

    /// `sup |pi_a - pi_b|` over points and action nodes.
    pub fn sup_distance(&self, other: &PolicyField) -> f64 {
        self.log_density
            .iter()
            .zip(&other.log_density)
            .map(|(a, b)| (a.exp() - b.exp()).abs())
            .fold(0.0, f64::max)
    }
}

/// Iterates, policies and diagnostics of one run.
#[derive(Debug, Clone)]
pub struct PiaRun<F> {
    /// `v^0, .., v^N`.
    pub values: Vec<F>,
    /// `pi^1, .., pi^N` when `record_policies` is set, else only `pi^N`.
    pub policies: Vec<PolicyField>,
    pub reference: F,
    pub report: IterationReport,
}

/// Reference solution with its fixed-point diagnostics.
#[derive(Debug, Clone)]
pub struct Reference<F> {
    pub field: F,
    pub iterations: usize,
    pub final_delta: f64,
    pub hjb_residual: f64,
    pub deltas: Vec<f64>,
}

struct Chain<F> {
    values: Vec<F>,
    policies: Vec<PolicyField>,
    deltas: Vec<DiscreteNorms>,
    min_increments: Vec<f64>,
    policy_deltas: Vec<f64>,
    vxx_identity: Vec<Option<f64>>,
    seconds: Vec<f64>,
}

/// Iterates until the `C^2` increment drops to `tol`, storing every iterate
/// and, if asked, every policy.
fn iterate<R: Regime>(regime: &R, tol: f64, max_iter: usize, keep_policies: bool) -> Result<Chain<R::Field>, PiaError> {
    let mut chain = Chain {
        values: vec![regime.initial()?],
        policies: Vec::new(),
        deltas: Vec::new(),
        min_increments: Vec::new(),
        policy_deltas: Vec::new(),
        vxx_identity: Vec::new(),
        seconds: Vec::new(),
    };
    let mut prev_policy: Option<PolicyField> = None;
    for n in 1..=max_iter {
        let start = Instant::now();
        let prev = chain.values.last().expect("initial iterate");
        let step = regime.step(prev, n)?;
        let delta = R::distance(&step.field, prev)?;
        chain.min_increments.push(R::min_increment(&step.field, prev));
        chain.policy_deltas.push(prev_policy.as_ref().map_or(f64::NAN, |p| step.policy.sup_distance(p)));
        chain.vxx_identity.push(step.vxx_identity);
        chain.deltas.push(delta);
        chain.values.push(step.field);
        if keep_policies {
            chain.policies.push(step.policy.clone());
        }
        prev_policy = Some(step.policy);
        chain.seconds.push(start.elapsed().as_secs_f64());
        let h = regime.grid().spacing();
        let resolvable = STALL_FACTOR * f64::EPSILON * R::scale(chain.values.last().expect("pushed")) / (h * h);
        if delta.total() <= tol.max(resolvable) {
            return Ok(chain);
        }
    }
    let deltas: Vec<f64> = chain.deltas.iter().map(|d| d.total()).collect();
    Err(PiaError::NoConvergence { tol, iterations: max_iter, last: deltas.last().copied().unwrap_or(f64::NAN), deltas })
}

fn run_regime<R: Regime>(regime: &R, config: &PiaConfig) -> Result<PiaRun<R::Field>, PiaError> {
    config.validate()?;
    let total_start = Instant::now();
    let chain = iterate(regime, config.reference_tol, 10 * config.max_iter, config.record_policies)?;
    let reference = chain.values.last().expect("nonempty").clone();
    let reference_residual = regime.hjb_residual(&reference)?;

    // report prefix: stop at stop_tol or max_iter
    let n_report = chain
        .deltas
        .iter()
        .position(|d| d.total() <= config.stop_tol)
        .map_or(chain.deltas.len(), |i| i + 1)
        .min(config.max_iter);

    let mut records = Vec::with_capacity(n_report + 1);
    for n in 0..=n_report {
        let v = &chain.values[n];
        let eps = R::distance(v, &reference)?;
        let (delta, min_inc, pdelta, vxx, secs) = if n == 0 {
            (None, None, None, None, 0.0)
        } else {
            let pd = chain.policy_deltas[n - 1];
            (
                Some(chain.deltas[n - 1]),
                Some(chain.min_increments[n - 1]),
                if pd.is_nan() { None } else { Some(pd) },
                chain.vxx_identity[n - 1],
                chain.seconds[n - 1],
            )
        };
        records.push(IterationRecord {
            n,
            eps,
            delta,
            policy_delta: pdelta,
            monotonicity_violation: min_inc,
            bound_violation: regime.bound_violation(v),
            residual: regime.hjb_residual(v)?,
            vxx_identity: vxx,
            seconds: secs,
        });
    }

    let h = regime.grid().spacing();
    let scale = R::scale(&reference);
    let reference_delta = chain.deltas.last().map_or(0.0, |d| d.total());
    // roundoff in k-th differences of the values plus the reference's own error
    let floor_for = |k: i32| {
        let resolved = ROUNDOFF_FACTOR * f64::EPSILON * scale / h.powi(k) + reference_delta;
        config.rate_floor.map_or(resolved, |f| f.max(resolved))
    };
    let summary = RateSummary::from_records(&records, floor_for(1), floor_for(2));
    let converged = chain.deltas.get(n_report - 1).is_some_and(|d| d.total() <= config.stop_tol);

    let policies = if config.record_policies {
        chain.policies.into_iter().take(n_report).collect()
    } else {
        // recompute the last reported policy from its predecessor
        vec![regime.policy(&chain.values[n_report - 1])?]
    };

    let report = IterationReport {
        regime: regime.kind(),
        grid: *regime.grid(),
        time_grid: regime.time_grid(),
        records,
        summary,
        converged,
        reference_iterations: chain.deltas.len(),
        reference_delta,
        reference_hjb_residual: reference_residual,
        total_seconds: total_start.elapsed().as_secs_f64(),
    };
    Ok(PiaRun { values: chain.values[..=n_report].to_vec(), policies, reference, report })
}

fn reference_for<R: Regime>(regime: &R, config: &PiaConfig) -> Result<Reference<R::Field>, PiaError> {
    config.validate()?;
    let chain = iterate(regime, config.reference_tol, 10 * config.max_iter, false)?;
    let field = chain.values.last().expect("nonempty").clone();
    Ok(Reference {
        hjb_residual: regime.hjb_residual(&field)?,
        iterations: chain.deltas.len(),
        final_delta: chain.deltas.last().map_or(0.0, |d| d.total()),
        deltas: chain.deltas.iter().map(|d| d.total()).collect(),
        field,
    })
}

/// Finite-horizon drift control; one parabolic solve per iteration.
pub fn pia_finite_horizon(
    problem: &crate::model::ControlProblem,
    grid: &Grid1D,
    tgrid: &TimeGrid,
    quad: &ActionQuadrature,
    config: &PiaConfig,
) -> Result<PiaRun<SpaceTimeField>, PiaError> {
    run_regime(&FiniteRegime::new(problem, grid, tgrid, quad, config.execution)?, config)
}

/// Discounted drift control; one elliptic solve per iteration.
pub fn pia_infinite_horizon(
    problem: &crate::model::ControlProblem,
    grid: &Grid1D,
    quad: &ActionQuadrature,
    config: &PiaConfig,
) -> Result<PiaRun<ValueField>, PiaError> {
    run_regime(&InfiniteRegime::new(problem, grid, quad, config.execution)?, config)
}

/// Discounted scalar diffusion control.
pub fn pia_diffusion_1d(
    problem: &crate::model::ControlProblem,
    grid: &Grid1D,
    quad: &ActionQuadrature,
    config: &PiaConfig,
) -> Result<PiaRun<ValueField>, PiaError> {
    run_regime(&DiffusionRegime::new(problem, grid, quad, config.execution)?, config)
}

/// Discrete fixed point of a discounted run (drift or diffusion control,
/// chosen by the problem's mode).
pub fn reference_solution(
    problem: &crate::model::ControlProblem,
    grid: &Grid1D,
    quad: &ActionQuadrature,
    config: &PiaConfig,
) -> Result<Reference<ValueField>, PiaError> {
    match problem.mode() {
        crate::model::ControlMode::DriftControl => {
            reference_for(&InfiniteRegime::new(problem, grid, quad, config.execution)?, config)
        }
        crate::model::ControlMode::DiffusionControl1D => {
            reference_for(&DiffusionRegime::new(problem, grid, quad, config.execution)?, config)
        }
    }
}

/// Discrete fixed point of a finite-horizon run.
pub fn reference_solution_finite(
    problem: &crate::model::ControlProblem,
    grid: &Grid1D,
    tgrid: &TimeGrid,
    quad: &ActionQuadrature,
    config: &PiaConfig,
) -> Result<Reference<SpaceTimeField>, PiaError> {
    reference_for(&FiniteRegime::new(problem, grid, tgrid, quad, config.execution)?, config)
}
