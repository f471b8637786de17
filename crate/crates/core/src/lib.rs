//! Policy iteration for entropy-regularized stochastic control.
//!
//! The crate discretizes scalar control problems whose optimal relaxed
//! control is a Gibbs density over an action interval, runs policy
//! iteration in three regimes (finite horizon, discounted infinite horizon,
//! scalar diffusion control), measures how fast the iterates converge and
//! cross-checks grid solutions against Monte-Carlo representation formulas.
//!
//! Module map:
//! - [`model`]: problems, grids, fields, discrete norms
//! - [`hamiltonian`]: Gibbs policy, Hamiltonian and its derivatives
//! - [`pde`]: linear elliptic and parabolic solvers
//! - [`pia`]: the iteration itself, reports and rate fitting
//! - [`feynman_kac`]: path simulation and Monte-Carlo estimators
//! - [`problems`]: named benchmark problems and the Picard counterexample
//! - [`cli`]: config-driven experiment runner

pub mod cli;
pub mod exec;
pub mod feynman_kac;
pub mod hamiltonian;
pub mod model;
pub mod pde;
pub mod pia;
pub mod problems;

pub use exec::Execution;
pub use hamiltonian::{gibbs_policy, hamiltonian, ActionQuadrature, GibbsEval, HamiltonianEval};
pub use model::{
    norms, Boundary, ControlMode, ControlProblem, DiscreteNorms, Grid1D, Horizon, SpaceTimeField, TimeGrid,
    ValueField,
};
