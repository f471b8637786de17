use crate::exec::{try_map_indexed, Execution};
use crate::hamiltonian::{evaluate_table, ActionQuadrature, ActionTable, GibbsEval, HamiltonianError, HamiltonianEval};
use crate::model::{
    norms, norms_space_time, ControlMode, ControlProblem, DiscreteNorms, Grid1D, Horizon, SpaceTimeField, TimeGrid,
    ValueField,
};
use crate::pde::{solve_elliptic, solve_parabolic, LinearPdeCoefficients};

use super::report::Regime as RegimeKind;
use super::{PiaError, PolicyField};

/// Slack below `sigma_min^2 / 2` tolerated in `H_q`.
const ELLIPTICITY_SLACK: f64 = 1e-10;

pub(crate) struct Step<F> {
    pub field: F,
    pub policy: PolicyField,
    pub vxx_identity: Option<f64>,
}

pub(crate) trait Regime: Sync {
    type Field: Clone + Send + Sync;

    fn kind(&self) -> RegimeKind;
    fn grid(&self) -> &Grid1D;
    fn time_grid(&self) -> Option<TimeGrid>;
    fn initial(&self) -> Result<Self::Field, PiaError>;
    fn step(&self, prev: &Self::Field, n: usize) -> Result<Step<Self::Field>, PiaError>;
    /// Policy induced by `prev`, the one the next step would use.
    fn policy(&self, prev: &Self::Field) -> Result<PolicyField, PiaError>;
    fn bound_violation(&self, field: &Self::Field) -> f64;
    fn hjb_residual(&self, field: &Self::Field) -> Result<f64, PiaError>;

    fn distance(a: &Self::Field, b: &Self::Field) -> Result<DiscreteNorms, PiaError>;
    fn min_increment(new: &Self::Field, old: &Self::Field) -> f64;
    fn scale(field: &Self::Field) -> f64;
}

/// Problem data shared by all regimes.
struct Context {
    problem: ControlProblem,
    grid: Grid1D,
    quad: ActionQuadrature,
    exec: Execution,
    tables: Vec<ActionTable>,
    half_sigma2: Vec<f64>,
}

impl Context {
    fn new(problem: &ControlProblem, grid: &Grid1D, quad: &ActionQuadrature, exec: Execution) -> Self {
        let nodes = grid.nodes();
        Self {
            problem: problem.clone(),
            grid: *grid,
            quad: quad.clone(),
            exec,
            tables: nodes.iter().map(|&x| ActionTable::new(problem, quad, x)).collect(),
            half_sigma2: nodes
                .iter()
                .map(|&x| {
                    let s = problem.sigma_state(x);
                    0.5 * s * s
                })
                .collect(),
        }
    }

    fn n(&self) -> usize {
        self.grid.n_nodes()
    }

    fn eval(
        &self,
        dx: &[f64],
        dxx: Option<&[f64]>,
    ) -> Result<Vec<(GibbsEval, HamiltonianEval)>, HamiltonianError> {
        let lambda = self.problem.temperature();
        try_map_indexed(self.n(), self.exec, |i| {
            evaluate_table(&self.tables[i], &self.quad, lambda, dx[i], dxx.map(|q| q[i]))
        })
    }

    fn policy_of(&self, evals: &[(GibbsEval, HamiltonianEval)]) -> PolicyField {
        PolicyField {
            n_points: evals.len(),
            n_actions: self.quad.len(),
            log_density: evals.iter().flat_map(|(g, _)| g.log_density()).collect(),
        }
    }

    fn entropy_bound(&self) -> f64 {
        self.problem.max_entropy_bonus()
    }
}

fn ham_err(iteration: usize) -> impl Fn(HamiltonianError) -> PiaError {
    move |source| PiaError::Hamiltonian { iteration, source }
}

fn pde_err(iteration: usize) -> impl Fn(crate::pde::PdeError) -> PiaError {
    move |source| PiaError::Pde { iteration, source }
}

fn min_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x - y).fold(f64::INFINITY, f64::min)
}

fn sup(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub(crate) struct InfiniteRegime {
    ctx: Context,
    rho: f64,
}

impl InfiniteRegime {
    pub fn new(
        problem: &ControlProblem,
        grid: &Grid1D,
        quad: &ActionQuadrature,
        exec: Execution,
    ) -> Result<Self, PiaError> {
        let rho = problem.discount().ok_or_else(|| PiaError::Regime("needs a discount".into()))?;
        if problem.mode() != ControlMode::DriftControl {
            return Err(PiaError::Regime("needs drift-control mode".into()));
        }
        Ok(Self { ctx: Context::new(problem, grid, quad, exec), rho })
    }

    #[allow(clippy::type_complexity)]
    fn coefficients(
        &self,
        prev: &ValueField,
        n: usize,
    ) -> Result<(LinearPdeCoefficients, Vec<(GibbsEval, HamiltonianEval)>), PiaError> {
        let evals = self.ctx.eval(prev.dx(), None).map_err(ham_err(n))?;
        let coeffs = LinearPdeCoefficients::new(
            self.ctx.half_sigma2.clone(),
            evals.iter().map(|e| e.1.h_z).collect(),
            evals.iter().map(|e| e.1.residual_h).collect(),
            self.rho,
        )
        .map_err(pde_err(n))?;
        Ok((coeffs, evals))
    }
}

impl Regime for InfiniteRegime {
    type Field = ValueField;

    fn kind(&self) -> RegimeKind {
        RegimeKind::InfiniteHorizon
    }

    fn grid(&self) -> &Grid1D {
        &self.ctx.grid
    }

    fn time_grid(&self) -> Option<TimeGrid> {
        None
    }

    fn initial(&self) -> Result<ValueField, PiaError> {
        let c0 = self.ctx.problem.coefficient_bound();
        Ok(ValueField::constant(self.ctx.grid, -(c0 - self.ctx.entropy_bound()) / self.rho)?)
    }

    fn step(&self, prev: &ValueField, n: usize) -> Result<Step<ValueField>, PiaError> {
        let (coeffs, evals) = self.coefficients(prev, n)?;
        let field = solve_elliptic(&coeffs, &self.ctx.grid).map_err(pde_err(n))?;
        Ok(Step { field, policy: self.ctx.policy_of(&evals), vxx_identity: None })
    }

    fn policy(&self, prev: &ValueField) -> Result<PolicyField, PiaError> {
        Ok(self.ctx.policy_of(&self.ctx.eval(prev.dx(), None).map_err(ham_err(0))?))
    }

    fn bound_violation(&self, field: &ValueField) -> f64 {
        let bound = (self.ctx.problem.coefficient_bound() + self.ctx.entropy_bound()) / self.rho;
        field.values().iter().map(|v| v - bound).fold(f64::NEG_INFINITY, f64::max)
    }

    fn hjb_residual(&self, field: &ValueField) -> Result<f64, PiaError> {
        let evals = self.ctx.eval(field.dx(), None).map_err(ham_err(0))?;
        Ok((0..self.ctx.n())
            .map(|i| (self.rho * field.values()[i] - self.ctx.half_sigma2[i] * field.dxx()[i] - evals[i].1.h_val).abs())
            .fold(0.0, f64::max))
    }

    fn distance(a: &ValueField, b: &ValueField) -> Result<DiscreteNorms, PiaError> {
        Ok(norms(a, b)?)
    }

    fn min_increment(new: &ValueField, old: &ValueField) -> f64 {
        min_diff(new.values(), old.values())
    }

    fn scale(field: &ValueField) -> f64 {
        sup(field.values())
    }
}

pub(crate) struct DiffusionRegime {
    ctx: Context,
    rho: f64,
    c2_floor: f64,
}

impl DiffusionRegime {
    pub fn new(
        problem: &ControlProblem,
        grid: &Grid1D,
        quad: &ActionQuadrature,
        exec: Execution,
    ) -> Result<Self, PiaError> {
        let rho = problem.discount().ok_or_else(|| PiaError::Regime("needs a discount".into()))?;
        if problem.mode() != ControlMode::DiffusionControl1D {
            return Err(PiaError::Regime("needs diffusion-control mode".into()));
        }
        let s = problem.sigma_min();
        Ok(Self { ctx: Context::new(problem, grid, quad, exec), rho, c2_floor: 0.5 * s * s - ELLIPTICITY_SLACK })
    }
}

impl Regime for DiffusionRegime {
    type Field = ValueField;

    fn kind(&self) -> RegimeKind {
        RegimeKind::Diffusion1D
    }

    fn grid(&self) -> &Grid1D {
        &self.ctx.grid
    }

    fn time_grid(&self) -> Option<TimeGrid> {
        None
    }

    fn initial(&self) -> Result<ValueField, PiaError> {
        let c0 = self.ctx.problem.coefficient_bound();
        Ok(ValueField::constant(self.ctx.grid, -(c0 - self.ctx.entropy_bound()) / self.rho)?)
    }

    fn step(&self, prev: &ValueField, n: usize) -> Result<Step<ValueField>, PiaError> {
        let evals = self.ctx.eval(prev.dx(), Some(prev.dxx())).map_err(ham_err(n))?;
        if let Some((node, e)) = evals.iter().enumerate().find(|(_, e)| e.1.h_q < self.c2_floor) {
            return Err(PiaError::Ellipticity { iteration: n, node, value: e.1.h_q });
        }
        let c1: Vec<f64> = evals.iter().map(|e| e.1.h_z).collect();
        let f: Vec<f64> = evals.iter().map(|e| e.1.residual_h).collect();
        let c2: Vec<f64> = evals.iter().map(|e| e.1.h_q).collect();
        let coeffs = LinearPdeCoefficients::new(c2, c1, f, self.rho).map_err(pde_err(n))?;
        let field = solve_elliptic(&coeffs, &self.ctx.grid).map_err(pde_err(n))?;
        // v_xx recovered algebraically from the equation just solved
        let identity = (0..self.ctx.n())
            .map(|i| {
                let explicit = (self.rho * field.values()[i]
                    - coeffs.first_order[i] * field.dx()[i]
                    - coeffs.source[i])
                    / coeffs.second_order[i];
                (field.dxx()[i] - explicit).abs()
            })
            .fold(0.0, f64::max);
        Ok(Step { field, policy: self.ctx.policy_of(&evals), vxx_identity: Some(identity) })
    }

    fn policy(&self, prev: &ValueField) -> Result<PolicyField, PiaError> {
        Ok(self.ctx.policy_of(&self.ctx.eval(prev.dx(), Some(prev.dxx())).map_err(ham_err(0))?))
    }

    fn bound_violation(&self, field: &ValueField) -> f64 {
        let bound = (self.ctx.problem.coefficient_bound() + self.ctx.entropy_bound()) / self.rho;
        field.values().iter().map(|v| v - bound).fold(f64::NEG_INFINITY, f64::max)
    }

    fn hjb_residual(&self, field: &ValueField) -> Result<f64, PiaError> {
        let evals = self.ctx.eval(field.dx(), Some(field.dxx())).map_err(ham_err(0))?;
        Ok((0..self.ctx.n())
            .map(|i| (self.rho * field.values()[i] - evals[i].1.h_val).abs())
            .fold(0.0, f64::max))
    }

    fn distance(a: &ValueField, b: &ValueField) -> Result<DiscreteNorms, PiaError> {
        Ok(norms(a, b)?)
    }

    fn min_increment(new: &ValueField, old: &ValueField) -> f64 {
        min_diff(new.values(), old.values())
    }

    fn scale(field: &ValueField) -> f64 {
        sup(field.values())
    }
}

pub(crate) struct FiniteRegime {
    ctx: Context,
    tgrid: TimeGrid,
    horizon: f64,
    terminal: ValueField,
}

impl FiniteRegime {
    pub fn new(
        problem: &ControlProblem,
        grid: &Grid1D,
        tgrid: &TimeGrid,
        quad: &ActionQuadrature,
        exec: Execution,
    ) -> Result<Self, PiaError> {
        let Horizon::Finite { horizon } = problem.horizon() else {
            return Err(PiaError::Regime("needs a finite horizon".into()));
        };
        if problem.mode() != ControlMode::DriftControl {
            return Err(PiaError::Regime("needs drift-control mode".into()));
        }
        if (tgrid.horizon() - horizon).abs() > 1e-12 * horizon {
            return Err(PiaError::Regime(format!(
                "time grid ends at {} but the horizon is {horizon}",
                tgrid.horizon()
            )));
        }
        let terminal = ValueField::from_fn(*grid, |x| problem.terminal_reward(x).unwrap_or(0.0))?;
        Ok(Self { ctx: Context::new(problem, grid, quad, exec), tgrid: *tgrid, horizon, terminal })
    }

    fn level_evals(
        &self,
        field: &SpaceTimeField,
        n: usize,
    ) -> Result<Vec<Vec<(GibbsEval, HamiltonianEval)>>, PiaError> {
        (0..self.tgrid.n_steps())
            .map(|k| self.ctx.eval(field.level(k).dx(), None).map_err(ham_err(n)))
            .collect()
    }

    fn upper_bound(&self, t: f64) -> f64 {
        let c0 = self.ctx.problem.coefficient_bound();
        c0 + (c0 + self.ctx.entropy_bound()) * (self.horizon - t)
    }
}

impl Regime for FiniteRegime {
    type Field = SpaceTimeField;

    fn kind(&self) -> RegimeKind {
        RegimeKind::FiniteHorizon
    }

    fn grid(&self) -> &Grid1D {
        &self.ctx.grid
    }

    fn time_grid(&self) -> Option<TimeGrid> {
        Some(self.tgrid)
    }

    fn initial(&self) -> Result<SpaceTimeField, PiaError> {
        let c0 = self.ctx.problem.coefficient_bound();
        let slope = c0 - self.ctx.entropy_bound();
        let levels = (0..=self.tgrid.n_steps())
            .map(|k| ValueField::constant(self.ctx.grid, -c0 - slope * (self.horizon - self.tgrid.time(k))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SpaceTimeField::new(self.tgrid, levels)?)
    }

    fn step(&self, prev: &SpaceTimeField, n: usize) -> Result<Step<SpaceTimeField>, PiaError> {
        let evals = self.level_evals(prev, n)?;
        let coeffs = evals
            .iter()
            .map(|lvl| {
                LinearPdeCoefficients::new(
                    self.ctx.half_sigma2.clone(),
                    lvl.iter().map(|e| e.1.h_z).collect(),
                    lvl.iter().map(|e| e.1.residual_h).collect(),
                    0.0,
                )
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(pde_err(n))?;
        let field = solve_parabolic(&coeffs, &self.terminal, &self.tgrid).map_err(pde_err(n))?;
        let flat: Vec<_> = evals.into_iter().flatten().collect();
        Ok(Step { field, policy: self.ctx.policy_of(&flat), vxx_identity: None })
    }

    fn policy(&self, prev: &SpaceTimeField) -> Result<PolicyField, PiaError> {
        let flat: Vec<_> = self.level_evals(prev, 0)?.into_iter().flatten().collect();
        Ok(self.ctx.policy_of(&flat))
    }

    fn bound_violation(&self, field: &SpaceTimeField) -> f64 {
        (0..=self.tgrid.n_steps())
            .flat_map(|k| {
                let b = self.upper_bound(self.tgrid.time(k));
                field.level(k).values().iter().map(move |v| v - b)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn hjb_residual(&self, field: &SpaceTimeField) -> Result<f64, PiaError> {
        let inv_dt = 1.0 / self.tgrid.dt();
        let evals = self.level_evals(field, 0)?;
        let mut worst = sup(
            &field
                .level(self.tgrid.n_steps())
                .values()
                .iter()
                .zip(self.terminal.values())
                .map(|(u, g)| u - g)
                .collect::<Vec<_>>(),
        );
        for (k, lvl) in evals.iter().enumerate() {
            let (u, next) = (field.level(k), field.level(k + 1));
            for i in 0..self.ctx.n() {
                let r = (next.values()[i] - u.values()[i]) * inv_dt
                    + self.ctx.half_sigma2[i] * u.dxx()[i]
                    + lvl[i].1.h_val;
                worst = worst.max(r.abs());
            }
        }
        Ok(worst)
    }

    fn distance(a: &SpaceTimeField, b: &SpaceTimeField) -> Result<DiscreteNorms, PiaError> {
        Ok(norms_space_time(a, b)?)
    }

    fn min_increment(new: &SpaceTimeField, old: &SpaceTimeField) -> f64 {
        new.levels()
            .iter()
            .zip(old.levels())
            .map(|(a, b)| min_diff(a.values(), b.values()))
            .fold(f64::INFINITY, f64::min)
    }

    fn scale(field: &SpaceTimeField) -> f64 {
        field.levels().iter().map(|l| sup(l.values())).fold(0.0, f64::max)
    }
}

/// Gibbs policy induced by a stationary field, nodes in grid order.
pub fn policy_from_field(
    problem: &ControlProblem,
    quad: &ActionQuadrature,
    field: &ValueField,
    exec: Execution,
) -> Result<PolicyField, HamiltonianError> {
    let ctx = Context::new(problem, field.grid(), quad, exec);
    let q = (problem.mode() == ControlMode::DiffusionControl1D).then(|| field.dxx());
    Ok(ctx.policy_of(&ctx.eval(field.dx(), q)?))
}

/// Gibbs policy induced by a space-time field at levels `0..n_steps`.
pub fn policy_from_space_time(
    problem: &ControlProblem,
    quad: &ActionQuadrature,
    field: &SpaceTimeField,
    exec: Execution,
) -> Result<PolicyField, HamiltonianError> {
    let ctx = Context::new(problem, field.grid(), quad, exec);
    let mut flat = Vec::new();
    for k in 0..field.time_grid().n_steps() {
        flat.extend(ctx.eval(field.level(k).dx(), None)?);
    }
    Ok(ctx.policy_of(&flat))
}

/// Discrete stationary HJB residual of `field`.
pub fn hjb_residual(
    problem: &ControlProblem,
    quad: &ActionQuadrature,
    field: &ValueField,
    exec: Execution,
) -> Result<f64, PiaError> {
    match problem.mode() {
        ControlMode::DriftControl => InfiniteRegime::new(problem, field.grid(), quad, exec)?.hjb_residual(field),
        ControlMode::DiffusionControl1D => DiffusionRegime::new(problem, field.grid(), quad, exec)?.hjb_residual(field),
    }
}

/// Linear equation solved by the discounted drift-control iterate that
/// follows `prev`: the Gibbs policy of `prev` frozen into drift and source.
pub fn frozen_coefficients(
    problem: &ControlProblem,
    quad: &ActionQuadrature,
    prev: &ValueField,
    exec: Execution,
) -> Result<LinearPdeCoefficients, PiaError> {
    Ok(InfiniteRegime::new(problem, prev.grid(), quad, exec)?.coefficients(prev, 0)?.0)
}
