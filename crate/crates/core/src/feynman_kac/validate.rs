use nalgebra::SVector;
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::hamiltonian::ActionQuadrature;
use crate::model::{ControlMode, ControlProblem, ValueField};
use crate::pde::solve_elliptic;
use crate::pia::{frozen_coefficients, PiaError};

use super::{estimate, simulate_paths, McError, McEstimate, ScalarSde, Tabulated1D};

/// Monte-Carlo settings for checking a grid iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSettings {
    pub n_paths: usize,
    pub dt_sim: f64,
    /// Truncation time; chosen from the path count when absent.
    pub t_max: Option<f64>,
    pub seed: u64,
    pub probe_points: Vec<f64>,
    /// Which iterate to check; its policy comes from iterate `iteration - 1`.
    pub iteration: usize,
    /// `C` in the bias allowance `C (dt_sim + h^2)`.
    pub bias_constant: f64,
    /// Standard errors allowed.
    pub std_errors: f64,
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            n_paths: 20_000,
            dt_sim: 0.005,
            t_max: None,
            seed: 2024,
            probe_points: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            iteration: 2,
            bias_constant: 2.0,
            std_errors: 3.0,
        }
    }
}

impl McSettings {
    pub fn validate(&self) -> Result<(), McError> {
        if self.n_paths < 2 || !(self.dt_sim > 0.0) || self.iteration == 0 || self.probe_points.is_empty() {
            return Err(McError::InvalidSpec(
                "need n_paths >= 2, dt_sim > 0, iteration >= 1 and at least one probe point".into(),
            ));
        }
        if self.t_max.is_some_and(|t| !(t > 0.0)) {
            return Err(McError::InvalidSpec("t_max must be positive".into()));
        }
        Ok(())
    }

    /// `t_max` with `e^(-rho t) / rho` about a tenth of `1 / (rho sqrt(n_paths))`.
    pub fn resolved_t_max(&self, rho: f64) -> f64 {
        self.t_max.unwrap_or_else(|| (10.0 * (self.n_paths as f64).sqrt()).ln() / rho)
    }
}

/// Grid and Monte-Carlo values at one probe point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeCheck {
    pub x0: f64,
    pub grid_value: f64,
    pub mc_value: McEstimate,
    pub value_budget: f64,
    pub value_ok: bool,
    pub grid_gradient: f64,
    pub mc_gradient: McEstimate,
    pub gradient_budget: f64,
    pub gradient_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCheck {
    pub iteration: usize,
    pub rho: f64,
    pub t_max: f64,
    pub dt_sim: f64,
    pub h: f64,
    pub probes: Vec<ProbeCheck>,
    pub passed: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckError {
    #[error(transparent)]
    Mc(#[from] McError),
    #[error(transparent)]
    Pia(#[from] PiaError),
    #[error("grid check needs a discounted drift-control problem with unit volatility")]
    Unsupported,
}

fn interpolate(field: &[f64], grid: &crate::model::Grid1D, x: f64) -> f64 {
    Tabulated1D::new(grid.x_lo(), grid.x_hi(), field.to_vec()).eval(x)
}

/// Iterates a discounted drift-control problem from its standard start,
/// then checks iterate `settings.iteration` against Feynman–Kac estimates
/// of value and gradient for the frozen linear equation it solves.
pub fn grid_cross_check(
    problem: &ControlProblem,
    grid: &crate::model::Grid1D,
    quad: &ActionQuadrature,
    settings: &McSettings,
    exec: Execution,
) -> Result<GridCheck, CheckError> {
    settings.validate()?;
    let rho = problem.discount().ok_or(CheckError::Unsupported)?;
    if problem.mode() != ControlMode::DriftControl || grid.boundary() == crate::model::Boundary::Periodic {
        return Err(CheckError::Unsupported);
    }
    let sig = grid.nodes().iter().map(|&x| (problem.sigma_state(x) - 1.0).abs()).fold(0.0, f64::max);
    if sig > 1e-12 {
        return Err(CheckError::Unsupported);
    }

    let c0 = problem.coefficient_bound();
    let start = -(c0 - problem.max_entropy_bonus()) / rho;
    let mut prev = ValueField::constant(*grid, start).map_err(PiaError::from)?;
    let mut coeffs = frozen_coefficients(problem, quad, &prev, exec)?;
    let mut current = solve_elliptic(&coeffs, grid).map_err(|source| PiaError::Pde { iteration: 1, source })?;
    for n in 2..=settings.iteration {
        prev = current;
        coeffs = frozen_coefficients(problem, quad, &prev, exec)?;
        current = solve_elliptic(&coeffs, grid).map_err(|source| PiaError::Pde { iteration: n, source })?;
    }

    let drift = Tabulated1D::new(grid.x_lo(), grid.x_hi(), coeffs.first_order.clone());
    let source = Tabulated1D::new(grid.x_lo(), grid.x_hi(), coeffs.source.clone());
    let source_bound = coeffs.source.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let d2 = drift.clone();
    let sde = ScalarSde::unit_sigma(move |x| drift.eval(x), move |x| d2.slope(x));

    let t_max = settings.resolved_t_max(rho);
    let tail = (-rho * t_max).exp() * source_bound / rho;
    let h = grid.spacing();
    let bias = settings.bias_constant * (settings.dt_sim + h * h);

    let mut probes = Vec::with_capacity(settings.probe_points.len());
    for (p, &x0) in settings.probe_points.iter().enumerate() {
        let bundle = simulate_paths(&sde, SVector::from([x0]), t_max, settings.n_paths, settings.dt_sim, settings.seed + p as u64)?
            .with_execution(exec);
        let dt = bundle.dt();
        // value and gradient from the same paths
        let samples = bundle.visit(
            || (0.0, 0.0),
            |acc, k, s| {
                let term = (-rho * s.t).exp() * source.eval(s.x[0]) * dt;
                acc.0 += term;
                if k > 0 {
                    acc.1 += term * s.weight()[0];
                }
            },
            |acc, _| acc,
        );
        let values: Vec<Option<f64>> = samples.iter().map(|s| s.map(|v| v.0)).collect();
        let grads: Vec<Option<f64>> = samples.iter().map(|s| s.map(|v| v.1)).collect();
        let mc_value = estimate(&values, tail)?;
        let mc_gradient = estimate(&grads, tail)?;
        let grid_value = interpolate(current.values(), grid, x0);
        let grid_gradient = interpolate(current.dx(), grid, x0);
        let value_budget = settings.std_errors * mc_value.std_error + tail + bias;
        let gradient_budget = settings.std_errors * mc_gradient.std_error + tail + bias;
        probes.push(ProbeCheck {
            x0,
            grid_value,
            value_ok: (mc_value.mean - grid_value).abs() <= value_budget,
            mc_value,
            value_budget,
            grid_gradient,
            gradient_ok: (mc_gradient.mean - grid_gradient).abs() <= gradient_budget,
            mc_gradient,
            gradient_budget,
        });
    }
    let passed = probes.iter().all(|p| p.value_ok && p.gradient_ok);
    Ok(GridCheck { iteration: settings.iteration, rho, t_max, dt_sim: settings.dt_sim, h, probes, passed })
}
