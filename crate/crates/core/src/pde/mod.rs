//! Linear solvers for the equations produced by each policy-iteration step.
//!
//! Elliptic: `rho w - c2 w_xx - c1 w_x = f`.
//! Parabolic: `w_t + c2 w_xx + c1 w_x + f = 0` with `w(T) = g`, marched
//! backward by implicit Euler.
//!
//! Transport is centred unless the cell Péclet number `|c1| h / c2` exceeds
//! 2, in which case that node is upwinded so the system stays an M-matrix.

mod operator;
mod tridiag;

pub use operator::{Operator, Transport, PECLET_LIMIT};
pub use tridiag::{solve_cyclic, solve_tridiagonal};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Grid1D, ModelError, SpaceTimeField, TimeGrid, ValueField};

/// Relative residual `|A w - f| / (|A| |w| + |f|)` accepted from a solve.
pub const RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdeError {
    #[error("singular system: zero or non-finite pivot at row {row}")]
    Singular { row: usize },
    #[error("relative residual {relative:e} exceeds tolerance")]
    Residual { relative: f64 },
    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),
    #[error("second-order coefficient {value} below ellipticity floor {floor} at node {node}")]
    NotElliptic { node: usize, value: f64, floor: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-node coefficients of one linear equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPdeCoefficients {
    pub second_order: Vec<f64>,
    pub first_order: Vec<f64>,
    pub source: Vec<f64>,
    pub discount: f64,
}

impl LinearPdeCoefficients {
    pub fn new(
        second_order: Vec<f64>,
        first_order: Vec<f64>,
        source: Vec<f64>,
        discount: f64,
    ) -> Result<Self, PdeError> {
        let n = second_order.len();
        if first_order.len() != n || source.len() != n {
            return Err(PdeError::InvalidCoefficients("coefficient arrays differ in length".into()));
        }
        if !(discount >= 0.0 && discount.is_finite()) {
            return Err(PdeError::InvalidCoefficients(format!("discount must be >= 0, got {discount}")));
        }
        let all = second_order.iter().chain(&first_order).chain(&source);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(PdeError::InvalidCoefficients("non-finite coefficient".into()));
        }
        if let Some((node, &value)) = second_order.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(PdeError::NotElliptic { node, value, floor: 0.0 });
        }
        Ok(Self { second_order, first_order, source, discount })
    }

    /// Spatially constant coefficients on `n` nodes.
    pub fn constant(n: usize, c2: f64, c1: f64, f: f64, discount: f64) -> Result<Self, PdeError> {
        Self::new(vec![c2; n], vec![c1; n], vec![f; n], discount)
    }

    pub fn len(&self) -> usize {
        self.second_order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.second_order.is_empty()
    }

    /// Rejects any `c2 < floor`.
    pub fn check_ellipticity(&self, floor: f64) -> Result<(), PdeError> {
        match self.second_order.iter().enumerate().find(|(_, v)| **v < floor) {
            Some((node, &value)) => Err(PdeError::NotElliptic { node, value, floor }),
            None => Ok(()),
        }
    }

    fn check_grid(&self, grid: &Grid1D) -> Result<(), PdeError> {
        if self.len() != grid.n_nodes() {
            return Err(PdeError::InvalidCoefficients(format!(
                "{} coefficients for {} nodes",
                self.len(),
                grid.n_nodes()
            )));
        }
        Ok(())
    }
}

/// Solves `(shift - L) w = rhs` and checks the residual.
fn solve_shifted(op: &Operator, shift: f64, rhs: &[f64]) -> Result<Vec<f64>, PdeError> {
    let n = op.len();
    let a: Vec<f64> = op.lower.iter().map(|v| -v).collect();
    let b: Vec<f64> = op.diag.iter().map(|v| shift - v).collect();
    let c: Vec<f64> = op.upper.iter().map(|v| -v).collect();
    let w = if op.cyclic { solve_cyclic(&a, &b, &c, rhs)? } else { solve_tridiagonal(&a, &b, &c, rhs)? };
    if let Some(row) = w.iter().position(|v| !v.is_finite()) {
        return Err(PdeError::Singular { row });
    }
    let lw = op.apply(&w);
    let res = (0..n).map(|i| (shift * w[i] - lw[i] - rhs[i]).abs()).fold(0.0, f64::max);
    let scale = op.shifted_norm(shift) * w.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        + rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale > 0.0 && res / scale > RESIDUAL_TOL {
        return Err(PdeError::Residual { relative: res / scale });
    }
    Ok(w)
}

/// Solves `rho w - c2 w_xx - c1 w_x = f` on `grid`.
pub fn solve_elliptic(coeffs: &LinearPdeCoefficients, grid: &Grid1D) -> Result<ValueField, PdeError> {
    coeffs.check_grid(grid)?;
    if !(coeffs.discount > 0.0) {
        return Err(PdeError::InvalidCoefficients("elliptic solve needs a positive discount".into()));
    }
    let op = Operator::assemble(coeffs, grid);
    let w = solve_shifted(&op, coeffs.discount, &coeffs.source)?;
    Ok(ValueField::new(*grid, w)?)
}

/// Solves `w_t + c2 w_xx + c1 w_x + f - rho w = 0`, `w(T) = terminal`, with
/// `coeffs_per_step[k]` frozen on the implicit level `t_k`.
pub fn solve_parabolic(
    coeffs_per_step: &[LinearPdeCoefficients],
    terminal: &ValueField,
    tgrid: &TimeGrid,
) -> Result<SpaceTimeField, PdeError> {
    let grid = *terminal.grid();
    if coeffs_per_step.len() != tgrid.n_steps() {
        return Err(PdeError::InvalidCoefficients(format!(
            "{} coefficient sets for {} time steps",
            coeffs_per_step.len(),
            tgrid.n_steps()
        )));
    }
    let inv_dt = 1.0 / tgrid.dt();
    let mut levels = vec![terminal.clone(); tgrid.n_steps() + 1];
    for k in (0..tgrid.n_steps()).rev() {
        let coeffs = &coeffs_per_step[k];
        coeffs.check_grid(&grid)?;
        let op = Operator::assemble(coeffs, &grid);
        let next = levels[k + 1].values();
        let rhs: Vec<f64> = next.iter().zip(&coeffs.source).map(|(w, f)| w * inv_dt + f).collect();
        let w = solve_shifted(&op, inv_dt + coeffs.discount, &rhs)?;
        levels[k] = ValueField::new(grid, w)?;
    }
    Ok(SpaceTimeField::new(*tgrid, levels)?)
}
