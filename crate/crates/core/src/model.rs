//! Control problems, spatial/temporal grids, grid fields and discrete norms.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Coefficient depending on state and action.
pub type StateActionFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Coefficient depending on state only.
pub type StateFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("non-finite value {value} at node {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}

/// Whether the action moves only the drift or also the volatility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    DriftControl,
    DiffusionControl1D,
}

/// Time structure of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    /// Finite horizon `T` with a terminal reward.
    Finite { horizon: f64 },
    /// Infinite horizon discounted at rate `rho`.
    Discounted { discount: f64 },
}

/// An entropy-regularized scalar control problem.
///
/// Coefficients are opaque closures, so the bound `C0` on them and their
/// derivatives and the ellipticity floor `sigma_min` are declared by the
/// caller. Construction only spot-checks `sigma >= sigma_min`.
#[derive(Clone)]
pub struct ControlProblem {
    drift: StateActionFn,
    diffusion: StateActionFn,
    running_reward: StateActionFn,
    terminal_reward: Option<StateFn>,
    action_lo: f64,
    action_hi: f64,
    temperature: f64,
    horizon: Horizon,
    coefficient_bound: f64,
    sigma_min: f64,
    mode: ControlMode,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("action", &(self.action_lo, self.action_hi))
            .field("temperature", &self.temperature)
            .field("horizon", &self.horizon)
            .field("coefficient_bound", &self.coefficient_bound)
            .field("sigma_min", &self.sigma_min)
            .field("mode", &self.mode)
            .finish_non_exhaustive()
    }
}

/// Points at which [`ControlProblemBuilder::build`] samples `sigma`.
const SIGMA_AUDIT_X: (f64, f64, usize) = (-10.0, 10.0, 81);
const SIGMA_AUDIT_ACTIONS: usize = 17;

pub struct ControlProblemBuilder {
    drift: Option<StateActionFn>,
    diffusion: Option<StateActionFn>,
    running_reward: Option<StateActionFn>,
    terminal_reward: Option<StateFn>,
    action: Option<(f64, f64)>,
    temperature: f64,
    horizon: Option<Horizon>,
    coefficient_bound: Option<f64>,
    sigma_min: Option<f64>,
    mode: ControlMode,
}

impl ControlProblemBuilder {
    pub fn drift(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.drift = Some(Arc::new(f));
        self
    }

    pub fn diffusion(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.diffusion = Some(Arc::new(f));
        self
    }

    pub fn running_reward(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.running_reward = Some(Arc::new(f));
        self
    }

    pub fn terminal_reward(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.terminal_reward = Some(Arc::new(f));
        self
    }

    pub fn actions(mut self, lo: f64, hi: f64) -> Self {
        self.action = Some((lo, hi));
        self
    }

    pub fn temperature(mut self, lambda: f64) -> Self {
        self.temperature = lambda;
        self
    }

    pub fn finite_horizon(mut self, horizon: f64) -> Self {
        self.horizon = Some(Horizon::Finite { horizon });
        self
    }

    pub fn discount(mut self, rho: f64) -> Self {
        self.horizon = Some(Horizon::Discounted { discount: rho });
        self
    }

    pub fn coefficient_bound(mut self, c0: f64) -> Self {
        self.coefficient_bound = Some(c0);
        self
    }

    pub fn sigma_min(mut self, sigma_min: f64) -> Self {
        self.sigma_min = Some(sigma_min);
        self
    }

    pub fn mode(mut self, mode: ControlMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn build(self) -> Result<ControlProblem, ModelError> {
        let missing = |what: &str| ModelError::InvalidProblem(format!("missing {what}"));
        let drift = self.drift.ok_or_else(|| missing("drift"))?;
        let diffusion = self.diffusion.ok_or_else(|| missing("diffusion"))?;
        let running_reward = self.running_reward.ok_or_else(|| missing("running reward"))?;
        let (action_lo, action_hi) = self.action.ok_or_else(|| missing("action interval"))?;
        let horizon = self.horizon.ok_or_else(|| missing("horizon or discount"))?;
        let coefficient_bound = self.coefficient_bound.ok_or_else(|| missing("coefficient bound"))?;
        let sigma_min = self.sigma_min.ok_or_else(|| missing("sigma_min"))?;

        let invalid = |msg: String| Err(ModelError::InvalidProblem(msg));
        if !(action_lo.is_finite() && action_hi.is_finite() && action_lo < action_hi) {
            return invalid(format!("action interval [{action_lo}, {action_hi}] is empty"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return invalid(format!("temperature must be positive, got {}", self.temperature));
        }
        match horizon {
            Horizon::Finite { horizon } if !(horizon > 0.0 && horizon.is_finite()) => {
                return invalid(format!("horizon must be positive, got {horizon}"));
            }
            Horizon::Discounted { discount } if !(discount > 0.0 && discount.is_finite()) => {
                return invalid(format!("discount must be positive, got {discount}"));
            }
            Horizon::Finite { .. } if self.terminal_reward.is_none() => {
                return invalid("finite horizon requires a terminal reward".into());
            }
            _ => {}
        }
        if !(coefficient_bound > 0.0 && coefficient_bound.is_finite()) {
            return invalid(format!("coefficient bound must be positive, got {coefficient_bound}"));
        }
        if !(sigma_min > 0.0 && sigma_min.is_finite()) {
            return invalid(format!("sigma_min must be positive, got {sigma_min}"));
        }

        let problem = ControlProblem {
            drift,
            diffusion,
            running_reward,
            terminal_reward: self.terminal_reward,
            action_lo,
            action_hi,
            temperature: self.temperature,
            horizon,
            coefficient_bound,
            sigma_min,
            mode: self.mode,
        };

        let (x_lo, x_hi, nx) = SIGMA_AUDIT_X;
        for i in 0..nx {
            let x = x_lo + (x_hi - x_lo) * i as f64 / (nx - 1) as f64;
            for j in 0..SIGMA_AUDIT_ACTIONS {
                let a = action_lo + (action_hi - action_lo) * j as f64 / (SIGMA_AUDIT_ACTIONS - 1) as f64;
                let s = problem.sigma(x, a);
                if !(s >= sigma_min) {
                    return invalid(format!("diffusion {s} below sigma_min {sigma_min} at x={x}, a={a}"));
                }
            }
        }
        Ok(problem)
    }
}

impl ControlProblem {
    pub fn builder() -> ControlProblemBuilder {
        ControlProblemBuilder {
            drift: None,
            diffusion: None,
            running_reward: None,
            terminal_reward: None,
            action: None,
            temperature: 1.0,
            horizon: None,
            coefficient_bound: None,
            sigma_min: None,
            mode: ControlMode::DriftControl,
        }
    }

    #[inline]
    pub fn drift(&self, x: f64, a: f64) -> f64 {
        (self.drift)(x, a)
    }

    /// Volatility at `(x, a)`. In drift-control mode the action is ignored
    /// and the coefficient is read at the lower action bound.
    #[inline]
    pub fn sigma(&self, x: f64, a: f64) -> f64 {
        match self.mode {
            ControlMode::DriftControl => (self.diffusion)(x, self.action_lo),
            ControlMode::DiffusionControl1D => (self.diffusion)(x, a),
        }
    }

    /// State-only volatility (drift-control mode).
    #[inline]
    pub fn sigma_state(&self, x: f64) -> f64 {
        (self.diffusion)(x, self.action_lo)
    }

    #[inline]
    pub fn running_reward(&self, x: f64, a: f64) -> f64 {
        (self.running_reward)(x, a)
    }

    pub fn terminal_reward(&self, x: f64) -> Option<f64> {
        self.terminal_reward.as_ref().map(|g| g(x))
    }

    pub fn action_lo(&self) -> f64 {
        self.action_lo
    }

    pub fn action_hi(&self) -> f64 {
        self.action_hi
    }

    /// `|A|`, the length of the action interval.
    pub fn action_volume(&self) -> f64 {
        self.action_hi - self.action_lo
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn discount(&self) -> Option<f64> {
        match self.horizon {
            Horizon::Discounted { discount } => Some(discount),
            Horizon::Finite { .. } => None,
        }
    }

    pub fn terminal_time(&self) -> Option<f64> {
        match self.horizon {
            Horizon::Finite { horizon } => Some(horizon),
            Horizon::Discounted { .. } => None,
        }
    }

    pub fn coefficient_bound(&self) -> f64 {
        self.coefficient_bound
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn mode(&self) -> ControlMode {
        self.mode
    }

    /// `lambda * (ln |A|)^+`, the largest entropy bonus per unit time.
    pub fn max_entropy_bonus(&self) -> f64 {
        self.temperature * self.action_volume().ln().max(0.0)
    }

    /// Same problem with a different temperature.
    pub fn with_temperature(&self, lambda: f64) -> Result<Self, ModelError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(ModelError::InvalidProblem(format!("temperature must be positive, got {lambda}")));
        }
        Ok(Self { temperature: lambda, ..self.clone() })
    }

    /// Same coefficients under a different control mode.
    pub fn with_mode(&self, mode: ControlMode) -> Self {
        Self { mode, ..self.clone() }
    }
}

/// Closure used at the ends of a bounded grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Wraps around; the period is `x_hi - x_lo` and `x_hi` itself is not a node.
    Periodic,
    /// Ghost nodes continue the field linearly: zero second difference at the
    /// end nodes, one-sided first difference.
    LinearExtrapolation,
    /// Ghost nodes mirror the field: zero first difference at the end nodes.
    Reflecting,
}

/// Uniform grid on `[x_lo, x_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    x_lo: f64,
    x_hi: f64,
    n_nodes: usize,
    boundary: Boundary,
}

impl Grid1D {
    pub fn new(x_lo: f64, x_hi: f64, n_nodes: usize, boundary: Boundary) -> Result<Self, ModelError> {
        if !(x_lo.is_finite() && x_hi.is_finite() && x_lo < x_hi) {
            return Err(ModelError::InvalidGrid(format!("empty interval [{x_lo}, {x_hi}]")));
        }
        if n_nodes < 3 {
            return Err(ModelError::InvalidGrid(format!("need at least 3 nodes, got {n_nodes}")));
        }
        Ok(Self { x_lo, x_hi, n_nodes, boundary })
    }

    pub fn x_lo(&self) -> f64 {
        self.x_lo
    }

    pub fn x_hi(&self) -> f64 {
        self.x_hi
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Node spacing. Periodic grids place `n` nodes per period.
    pub fn spacing(&self) -> f64 {
        let len = self.x_hi - self.x_lo;
        match self.boundary {
            Boundary::Periodic => len / self.n_nodes as f64,
            _ => len / (self.n_nodes - 1) as f64,
        }
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.x_lo + i as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|i| self.node(i)).collect()
    }

    /// Index of the node closest to `x`.
    pub fn nearest_node(&self, x: f64) -> usize {
        let i = ((x - self.x_lo) / self.spacing()).round();
        i.clamp(0.0, (self.n_nodes - 1) as f64) as usize
    }

    /// Grid with every cell split in two; shares all nodes of `self`.
    pub fn refined(&self) -> Self {
        let n = match self.boundary {
            Boundary::Periodic => 2 * self.n_nodes,
            _ => 2 * (self.n_nodes - 1) + 1,
        };
        Self { n_nodes: n, ..*self }
    }
}

/// Uniform time grid on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self, ModelError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(ModelError::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(ModelError::InvalidGrid("need at least one time step".into()));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Time of level `k`, `0 <= k <= n_steps`.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }
}

/// Grid values together with their cached finite-difference derivatives.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueField {
    grid: Grid1D,
    values: Vec<f64>,
    dx: Vec<f64>,
    dxx: Vec<f64>,
}

impl ValueField {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self, ModelError> {
        finite_difference_derivatives(grid, values)
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Result<Self, ModelError> {
        Self::new(grid, grid.nodes().into_iter().map(f).collect())
    }

    pub fn constant(grid: Grid1D, c: f64) -> Result<Self, ModelError> {
        Self::new(grid, vec![c; grid.n_nodes()])
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    pub fn dxx(&self) -> &[f64] {
        &self.dxx
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Builds a [`ValueField`], filling `dx`/`dxx` with second-order central
/// differences in the interior and the grid's boundary closure at the ends.
pub fn finite_difference_derivatives(grid: Grid1D, values: Vec<f64>) -> Result<ValueField, ModelError> {
    let n = grid.n_nodes();
    if values.len() != n {
        return Err(ModelError::GridMismatch(format!("{} values for {n} nodes", values.len())));
    }
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(ModelError::NonFinite { index, value });
    }
    let h = grid.spacing();
    let (inv_2h, inv_h2) = (0.5 / h, 1.0 / (h * h));
    let mut dx = vec![0.0; n];
    let mut dxx = vec![0.0; n];
    for i in 1..n - 1 {
        let (l, c, r) = (values[i - 1], values[i], values[i + 1]);
        dx[i] = (r - l) * inv_2h;
        dxx[i] = (r - 2.0 * c + l) * inv_h2;
    }
    let last = n - 1;
    match grid.boundary() {
        Boundary::Periodic => {
            for (i, l, r) in [(0, last, 1), (last, last - 1, 0)] {
                dx[i] = (values[r] - values[l]) * inv_2h;
                dxx[i] = (values[r] - 2.0 * values[i] + values[l]) * inv_h2;
            }
        }
        Boundary::LinearExtrapolation => {
            // ghost u[-1] = 2u[0] - u[1]: the central difference collapses to one side
            dx[0] = (values[1] - values[0]) / h;
            dx[last] = (values[last] - values[last - 1]) / h;
        }
        Boundary::Reflecting => {
            dxx[0] = 2.0 * (values[1] - values[0]) * inv_h2;
            dxx[last] = 2.0 * (values[last - 1] - values[last]) * inv_h2;
        }
    }
    Ok(ValueField { grid, values, dx, dxx })
}

/// A field per time level `t_0 = 0 < .. < t_N = T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpaceTimeField {
    time_grid: TimeGrid,
    levels: Vec<ValueField>,
}

impl SpaceTimeField {
    pub fn new(time_grid: TimeGrid, levels: Vec<ValueField>) -> Result<Self, ModelError> {
        if levels.len() != time_grid.n_steps() + 1 {
            return Err(ModelError::GridMismatch(format!(
                "{} levels for {} time steps",
                levels.len(),
                time_grid.n_steps()
            )));
        }
        let grid = levels[0].grid;
        if levels.iter().any(|l| l.grid != grid) {
            return Err(ModelError::GridMismatch("levels on different spatial grids".into()));
        }
        Ok(Self { time_grid, levels })
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    pub fn grid(&self) -> &Grid1D {
        self.levels[0].grid()
    }

    pub fn levels(&self) -> &[ValueField] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &ValueField {
        &self.levels[k]
    }
}

/// Sup-norms of a difference and of its first and second differences.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DiscreteNorms {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl DiscreteNorms {
    /// `c0 + c1 + c2`, the discrete `C^2` norm.
    pub fn total(&self) -> f64 {
        self.c0 + self.c1 + self.c2
    }

    pub fn max(self, other: Self) -> Self {
        Self {
            c0: self.c0.max(other.c0),
            c1: self.c1.max(other.c1),
            c2: self.c2.max(other.c2),
        }
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Componentwise sup of `|a - b|`, `|a_x - b_x|`, `|a_xx - b_xx|`.
pub fn norms(a: &ValueField, b: &ValueField) -> Result<DiscreteNorms, ModelError> {
    if a.grid != b.grid {
        return Err(ModelError::GridMismatch(format!("{:?} vs {:?}", a.grid, b.grid)));
    }
    Ok(DiscreteNorms {
        c0: sup_diff(&a.values, &b.values),
        c1: sup_diff(&a.dx, &b.dx),
        c2: sup_diff(&a.dxx, &b.dxx),
    })
}

/// [`norms`] taken over every time level.
pub fn norms_space_time(a: &SpaceTimeField, b: &SpaceTimeField) -> Result<DiscreteNorms, ModelError> {
    if a.time_grid != b.time_grid {
        return Err(ModelError::GridMismatch("different time grids".into()));
    }
    a.levels
        .iter()
        .zip(&b.levels)
        .try_fold(DiscreteNorms::default(), |acc, (x, y)| Ok(acc.max(norms(x, y)?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn periodic(n: usize) -> Grid1D {
        Grid1D::new(0.0, 2.0 * PI, n, Boundary::Periodic).unwrap()
    }

    #[test]
    fn constant_field_has_zero_derivatives() {
        for boundary in [Boundary::Periodic, Boundary::LinearExtrapolation, Boundary::Reflecting] {
            let g = Grid1D::new(-1.0, 3.0, 17, boundary).unwrap();
            let f = ValueField::constant(g, 2.5).unwrap();
            assert!(f.dx().iter().chain(f.dxx()).all(|&d| d == 0.0));
        }
    }

    #[test]
    fn identity_field_on_linear_extrapolation_grid() {
        let g = Grid1D::new(-2.0, 2.0, 41, Boundary::LinearExtrapolation).unwrap();
        let f = ValueField::from_fn(g, |x| x).unwrap();
        for (&d1, &d2) in f.dx().iter().zip(f.dxx()) {
            assert!((d1 - 1.0).abs() < 1e-12);
            assert!(d2.abs() < 1e-9);
        }
        assert_eq!(f.dxx()[0], 0.0);
        assert_eq!(f.dxx()[40], 0.0);
    }

    #[test]
    fn reflecting_boundary_has_zero_slope_at_ends() {
        let g = Grid1D::new(0.0, 1.0, 11, Boundary::Reflecting).unwrap();
        let f = ValueField::from_fn(g, |x| x * x).unwrap();
        assert_eq!(f.dx()[0], 0.0);
        assert_eq!(f.dx()[10], 0.0);
        assert!((f.dxx()[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn periodic_sine_derivative_is_second_order_accurate() {
        let g = periodic(512);
        let f = ValueField::from_fn(g, f64::sin).unwrap();
        let err = g
            .nodes()
            .iter()
            .zip(f.dx())
            .fold(0.0f64, |m, (x, d)| m.max((d - x.cos()).abs()));
        assert!(err <= 1e-4, "{err}");
        // period excludes the right endpoint
        assert!((g.node(511) + g.spacing() - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let g = periodic(8);
        let mut v = vec![0.0; 8];
        v[3] = f64::NAN;
        assert!(matches!(ValueField::new(g, v), Err(ModelError::NonFinite { index: 3, .. })));
    }

    #[test]
    fn norms_examples() {
        let g = periodic(512);
        let f = ValueField::from_fn(g, f64::sin).unwrap();
        assert_eq!(norms(&f, &f).unwrap(), DiscreteNorms::default());

        let shifted = ValueField::from_fn(g, |x| x.sin() + 1.0).unwrap();
        let n = norms(&shifted, &f).unwrap();
        assert!((n.c0 - 1.0).abs() < 1e-12 && n.c1 < 1e-12 && n.c2 < 1e-9);

        let zero = ValueField::constant(g, 0.0).unwrap();
        let n = norms(&f, &zero).unwrap();
        for c in [n.c0, n.c1, n.c2] {
            assert!((c - 1.0).abs() <= 1e-3, "{n:?}");
        }
    }

    #[test]
    fn norms_reject_grid_mismatch() {
        let a = ValueField::constant(periodic(16), 0.0).unwrap();
        let b = ValueField::constant(periodic(17), 0.0).unwrap();
        assert!(matches!(norms(&a, &b), Err(ModelError::GridMismatch(_))));
    }

    #[test]
    fn refinement_keeps_coarse_nodes() {
        let g = Grid1D::new(-8.0, 8.0, 161, Boundary::Reflecting).unwrap();
        let fine = g.refined();
        assert_eq!(fine.n_nodes(), 321);
        assert!((fine.node(2 * 37) - g.node(37)).abs() < 1e-12);
        let p = periodic(64).refined();
        assert_eq!(p.n_nodes(), 128);
    }

    #[test]
    fn problem_builder_validates() {
        let base = || {
            ControlProblem::builder()
                .drift(|_, a| a)
                .diffusion(|_, _| 1.0)
                .running_reward(|_, _| 0.0)
                .actions(-1.0, 1.0)
                .coefficient_bound(1.0)
                .sigma_min(1.0)
        };
        assert!(base().discount(1.0).build().is_ok());
        assert!(base().build().is_err(), "horizon is required");
        assert!(base().finite_horizon(1.0).build().is_err(), "terminal reward required");
        assert!(base().discount(1.0).actions(1.0, 1.0).build().is_err());
        assert!(base().discount(1.0).temperature(0.0).build().is_err());
        assert!(base().discount(1.0).sigma_min(1.5).build().is_err());
        let p = base().discount(2.0).temperature(1.0).build().unwrap();
        assert!((p.max_entropy_bonus() - 2f64.ln()).abs() < 1e-15);
    }

    fn arb_field(g: Grid1D) -> impl Strategy<Value = ValueField> {
        prop::collection::vec(-10.0f64..10.0, g.n_nodes()).prop_map(move |v| ValueField::new(g, v).unwrap())
    }

    proptest! {
        #[test]
        fn derivative_caching_is_idempotent(v in prop::collection::vec(-5.0f64..5.0, 12)) {
            let g = Grid1D::new(0.0, 1.0, 12, Boundary::LinearExtrapolation).unwrap();
            let f = ValueField::new(g, v).unwrap();
            let again = finite_difference_derivatives(g, f.values().to_vec()).unwrap();
            prop_assert_eq!(f, again);
        }

        #[test]
        fn periodic_mean_slope_vanishes(v in prop::collection::vec(-5.0f64..5.0, 32)) {
            let f = ValueField::new(periodic(32), v).unwrap();
            let mean: f64 = f.dx().iter().sum::<f64>() / 32.0;
            prop_assert!(mean.abs() < 1e-12);
        }

        #[test]
        fn norms_form_a_pseudometric(
            (a, b, c) in (arb_field(periodic(10)), arb_field(periodic(10)), arb_field(periodic(10)))
        ) {
            let ab = norms(&a, &b).unwrap();
            prop_assert_eq!(ab, norms(&b, &a).unwrap());
            let (ac, cb) = (norms(&a, &c).unwrap(), norms(&c, &b).unwrap());
            let slack = 1e-9;
            prop_assert!(ab.c0 <= ac.c0 + cb.c0 + slack);
            prop_assert!(ab.c1 <= ac.c1 + cb.c1 + slack);
            prop_assert!(ab.c2 <= ac.c2 + cb.c2 + slack);
        }
    }
}
