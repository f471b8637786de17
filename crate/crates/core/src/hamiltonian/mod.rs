//! Gibbs policy and Hamiltonian of the entropy-regularized problem.
//!
//! For a state `x`, gradient `z` and (diffusion control only) curvature `q`
//! the Gibbs score of action `a` is
//! `s(a) = [b(x,a) z + r(x,a) + sigma(x,a)^2 q / 2] / lambda`, the policy is
//! `exp(s - log Z)` and the Hamiltonian is `lambda * log Z`. All integrals
//! over the action interval go through one [`ActionQuadrature`], so every
//! identity below holds exactly for the discrete rule and `exp(s)` is never
//! formed without a max-shift.

mod quadrature;

pub use quadrature::ActionQuadrature;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ControlMode, ControlProblem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HamiltonianError {
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("non-finite Gibbs score {score} at action {action}")]
    NonFiniteScore { action: f64, score: f64 },
    #[error("curvature argument q must be given exactly in diffusion-control mode")]
    ModeMismatch,
    #[error("invalid quadrature: {0}")]
    InvalidQuadrature(String),
    #[error("empty sample")]
    EmptySample,
}

/// Gibbs density on the quadrature nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GibbsEval {
    /// Scores `s(a)` at the nodes.
    pub log_weights: Vec<f64>,
    /// `log Z = log sum_i w_i exp(s_i)`, in score units (no `lambda`).
    pub log_partition: f64,
    /// `Gamma(a_i) = exp(s_i - log Z)`.
    pub density: Vec<f64>,
    /// `-sum_i w_i Gamma_i ln Gamma_i`.
    pub entropy: f64,
}

impl GibbsEval {
    /// `ln Gamma` at the nodes.
    pub fn log_density(&self) -> impl Iterator<Item = f64> + '_ {
        self.log_weights.iter().map(move |s| s - self.log_partition)
    }
}

/// Hamiltonian value and the Gamma-weighted derivative formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianEval {
    /// `H`.
    pub h_val: f64,
    /// `H_z = sum w Gamma b`.
    pub h_z: f64,
    /// `H_q = sum w Gamma sigma^2 / 2`.
    pub h_q: f64,
    /// `h = H - H_z z - H_q q`, with `q = 0` in drift-control mode.
    pub residual_h: f64,
    /// Entropy of the Gibbs density.
    pub entropy: f64,
}

/// Coefficients tabulated on the action nodes at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionTable {
    drift: Vec<f64>,
    reward: Vec<f64>,
    half_sigma2: Vec<f64>,
}

impl ActionTable {
    pub fn new(problem: &ControlProblem, quad: &ActionQuadrature, x: f64) -> Self {
        let a = quad.nodes();
        Self {
            drift: a.iter().map(|&a| problem.drift(x, a)).collect(),
            reward: a.iter().map(|&a| problem.running_reward(x, a)).collect(),
            half_sigma2: a
                .iter()
                .map(|&a| {
                    let s = problem.sigma(x, a);
                    0.5 * s * s
                })
                .collect(),
        }
    }

    pub fn drift(&self) -> &[f64] {
        &self.drift
    }

    pub fn half_sigma2(&self) -> &[f64] {
        &self.half_sigma2
    }
}

fn check_q(problem: &ControlProblem, q: Option<f64>) -> Result<(), HamiltonianError> {
    match (problem.mode(), q) {
        (ControlMode::DriftControl, None) | (ControlMode::DiffusionControl1D, Some(_)) => Ok(()),
        _ => Err(HamiltonianError::ModeMismatch),
    }
}

/// Gibbs density for scores `logits / lambda`.
pub fn gibbs_from_logits(
    quad: &ActionQuadrature,
    logits: &[f64],
    lambda: f64,
) -> Result<GibbsEval, HamiltonianError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(HamiltonianError::Temperature(lambda));
    }
    let s: Vec<f64> = logits.iter().map(|l| l / lambda).collect();
    gibbs_from_scores(quad, s)
}

fn gibbs_from_scores(quad: &ActionQuadrature, s: Vec<f64>) -> Result<GibbsEval, HamiltonianError> {
    if let Some((i, &score)) = s.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(HamiltonianError::NonFiniteScore { action: quad.nodes()[i], score });
    }
    let w = quad.weights();
    let smax = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = s.iter().map(|v| (v - smax).exp()).collect();
    let mass: f64 = shifted.iter().zip(w).map(|(e, w)| e * w).sum();
    let log_partition = smax + mass.ln();
    let density: Vec<f64> = shifted.iter().map(|e| e / mass).collect();
    // ln Gamma = s - log Z; avoids 0 * ln 0
    let entropy = -density
        .iter()
        .zip(&s)
        .zip(w)
        .map(|((g, si), w)| w * g * (si - log_partition))
        .sum::<f64>();
    Ok(GibbsEval { log_weights: s, log_partition, density, entropy })
}

/// Gibbs policy and Hamiltonian from precomputed action tables.
pub fn evaluate_table(
    table: &ActionTable,
    quad: &ActionQuadrature,
    lambda: f64,
    z: f64,
    q: Option<f64>,
) -> Result<(GibbsEval, HamiltonianEval), HamiltonianError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(HamiltonianError::Temperature(lambda));
    }
    let qv = q.unwrap_or(0.0);
    let s: Vec<f64> = (0..quad.len())
        .map(|i| {
            let mut score = table.drift[i] * z + table.reward[i];
            if q.is_some() {
                score += table.half_sigma2[i] * qv;
            }
            score / lambda
        })
        .collect();
    let gibbs = gibbs_from_scores(quad, s)?;
    let w = quad.weights();
    let mut h_z = 0.0;
    let mut h_q = 0.0;
    let mut mean_reward = 0.0;
    for i in 0..quad.len() {
        let m = w[i] * gibbs.density[i];
        h_z += m * table.drift[i];
        h_q += m * table.half_sigma2[i];
        mean_reward += m * table.reward[i];
    }
    let h_val = lambda * gibbs.log_partition;
    // H - H_z z - H_q q equals the Gamma-mean reward plus lambda * entropy
    // for the discrete rule; this form avoids cancellation at large |q|.
    let residual_h = mean_reward + lambda * gibbs.entropy;
    let eval = HamiltonianEval { h_val, h_z, h_q, residual_h, entropy: gibbs.entropy };
    Ok((gibbs, eval))
}

/// Gibbs policy at `(x, z, q)`. `q` must be given iff the problem is in
/// diffusion-control mode.
pub fn gibbs_policy(
    problem: &ControlProblem,
    quad: &ActionQuadrature,
    x: f64,
    z: f64,
    q: Option<f64>,
) -> Result<GibbsEval, HamiltonianError> {
    check_q(problem, q)?;
    let table = ActionTable::new(problem, quad, x);
    Ok(evaluate_table(&table, quad, problem.temperature(), z, q)?.0)
}

/// Hamiltonian and its derivatives at `(x, z, q)`.
pub fn hamiltonian(
    problem: &ControlProblem,
    quad: &ActionQuadrature,
    x: f64,
    z: f64,
    q: Option<f64>,
) -> Result<HamiltonianEval, HamiltonianError> {
    check_q(problem, q)?;
    let table = ActionTable::new(problem, quad, x);
    Ok(evaluate_table(&table, quad, problem.temperature(), z, q)?.1)
}

/// Empirical check of `|h| <= eps |q| + C |z| + C_eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HBoundReport {
    /// `max |h|` over the sample.
    pub max_abs_h: f64,
    /// `max (|h| - eps |q| - C |z|)`; the bound holds with `C_eps = 0` iff this is `<= 0`.
    pub max_violation: f64,
    /// Smallest `C_eps` for the given `eps`.
    pub fitted_c_eps: f64,
    /// Smallest `C_eps` for `eps / 10`.
    pub fitted_c_eps_tenth: f64,
    /// `C_eps` grew by more than a factor 10 when `eps` shrank by 10.
    pub superlinear: bool,
}

/// Fits the constant of the `h`-growth bound on a sample of `(x, z, q)`.
pub fn verify_h_bound(
    problem: &ControlProblem,
    quad: &ActionQuadrature,
    samples: &[(f64, f64, f64)],
    epsilon: f64,
    z_coefficient: f64,
) -> Result<HBoundReport, HamiltonianError> {
    if problem.mode() != ControlMode::DiffusionControl1D {
        return Err(HamiltonianError::ModeMismatch);
    }
    if samples.is_empty() {
        return Err(HamiltonianError::EmptySample);
    }
    let hs = samples
        .iter()
        .map(|&(x, z, q)| Ok((hamiltonian(problem, quad, x, z, Some(q))?.residual_h.abs(), z, q)))
        .collect::<Result<Vec<_>, HamiltonianError>>()?;
    let worst = |eps: f64| {
        hs.iter()
            .map(|&(h, z, q)| h - eps * q.abs() - z_coefficient * z.abs())
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let max_violation = worst(epsilon);
    let fitted_c_eps = max_violation.max(0.0);
    let fitted_c_eps_tenth = worst(epsilon / 10.0).max(0.0);
    let superlinear = fitted_c_eps_tenth > 10.0 * fitted_c_eps.max(f64::MIN_POSITIVE) && fitted_c_eps_tenth > 1e-12;
    Ok(HBoundReport {
        max_abs_h: hs.iter().map(|t| t.0).fold(0.0, f64::max),
        max_violation,
        fitted_c_eps,
        fitted_c_eps_tenth,
        superlinear,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn linear_drift(lo: f64, hi: f64, mode: ControlMode) -> ControlProblem {
        ControlProblem::builder()
            .drift(|_, a| a)
            .diffusion(|_, _| 1.0)
            .running_reward(|_, _| 0.0)
            .actions(lo, hi)
            .discount(1.0)
            .coefficient_bound(1.0)
            .sigma_min(1.0)
            .mode(mode)
            .build()
            .unwrap()
    }

    fn constant_coefficients(lo: f64, hi: f64) -> ControlProblem {
        ControlProblem::builder()
            .drift(|x, _| x.sin())
            .diffusion(|_, _| 1.0)
            .running_reward(|x, _| x.cos())
            .actions(lo, hi)
            .discount(1.0)
            .coefficient_bound(1.0)
            .sigma_min(1.0)
            .build()
            .unwrap()
    }

    #[test]
    fn uniform_gibbs_examples() {
        let p = constant_coefficients(0.0, 1.0);
        let q = ActionQuadrature::for_interval(0.0, 1.0).unwrap();
        let g = gibbs_policy(&p, &q, 0.3, 2.0, None).unwrap();
        for d in &g.density {
            assert_abs_diff_eq!(*d, 1.0, epsilon = 1e-13);
        }
        assert_abs_diff_eq!(g.entropy, 0.0, epsilon = 1e-13);

        let p = constant_coefficients(-1.0, 1.0);
        let q = ActionQuadrature::for_interval(-1.0, 1.0).unwrap();
        let g = gibbs_policy(&p, &q, 0.3, 2.0, None).unwrap();
        for d in &g.density {
            assert_abs_diff_eq!(*d, 0.5, epsilon = 1e-13);
        }
        assert_abs_diff_eq!(g.entropy, 2f64.ln(), epsilon = 1e-13);
    }

    #[test]
    fn linear_drift_gibbs_density_is_exponential() {
        let p = linear_drift(-1.0, 1.0, ControlMode::DriftControl);
        // nodes at the endpoints to read off density(1) / density(-1)
        let q = ActionQuadrature::from_parts(vec![-1.0, 0.0, 1.0], vec![1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0]).unwrap();
        let g = gibbs_policy(&p, &q, 0.0, 1.0, None).unwrap();
        assert_abs_diff_eq!(g.density[2] / g.density[0], 1f64.exp().powi(2), epsilon = 1e-12);

        let q = ActionQuadrature::for_interval(-1.0, 1.0).unwrap();
        let g = gibbs_policy(&p, &q, 0.0, 1.0, None).unwrap();
        let norm = 2.0 * 1f64.sinh();
        for (a, d) in q.nodes().iter().zip(&g.density) {
            assert_abs_diff_eq!(*d, a.exp() / norm, epsilon = 1e-12);
        }
    }

    #[test]
    fn hamiltonian_closed_forms() {
        let p = linear_drift(-1.0, 1.0, ControlMode::DriftControl);
        let q = ActionQuadrature::for_interval(-1.0, 1.0).unwrap();
        let h0 = hamiltonian(&p, &q, 0.0, 0.0, None).unwrap();
        assert_abs_diff_eq!(h0.h_val, 2f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(h0.h_z, 0.0, epsilon = 1e-14);
        let h1 = hamiltonian(&p, &q, 0.0, 1.0, None).unwrap();
        assert_abs_diff_eq!(h1.h_val, (1f64.exp() - (-1f64).exp()).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(h1.h_z, 1.0 / 1f64.tanh() - 1.0, epsilon = 1e-12);

        let pd = linear_drift(-1.0, 1.0, ControlMode::DiffusionControl1D);
        for (z, qq) in [(0.0, 0.0), (2.0, -3.0), (-1.0, 40.0)] {
            assert_abs_diff_eq!(hamiltonian(&pd, &q, 0.1, z, Some(qq)).unwrap().h_q, 0.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn residual_matches_definition() {
        let p = ControlProblem::builder()
            .drift(|x, a| a * x.tanh() + 0.2 * x.sin())
            .diffusion(|x, a| 1.0 + 0.4 * a.sin() / x.cosh())
            .running_reward(|x, a| -0.5 * a * a + x.cos())
            .actions(-1.0, 1.0)
            .discount(1.0)
            .coefficient_bound(2.0)
            .sigma_min(0.6)
            .mode(ControlMode::DiffusionControl1D)
            .build()
            .unwrap();
        let quad = ActionQuadrature::for_interval(-1.0, 1.0).unwrap();
        for (x, z, q) in [(0.3, 1.2, -0.7), (-1.0, -3.0, 2.5), (0.0, 0.0, 0.0)] {
            let e = hamiltonian(&p, &quad, x, z, Some(q)).unwrap();
            assert_abs_diff_eq!(e.residual_h, e.h_val - e.h_z * z - e.h_q * q, epsilon = 1e-12);
        }
    }

    #[test]
    fn mode_and_temperature_errors() {
        let p = linear_drift(-1.0, 1.0, ControlMode::DriftControl);
        let q = ActionQuadrature::for_interval(-1.0, 1.0).unwrap();
        assert_eq!(gibbs_policy(&p, &q, 0.0, 0.0, Some(1.0)), Err(HamiltonianError::ModeMismatch));
        assert!(matches!(gibbs_from_logits(&q, &[0.0; 32], 0.0), Err(HamiltonianError::Temperature(_))));
        assert!(matches!(
            hamiltonian(&p, &q, 0.0, f64::INFINITY, None),
            Err(HamiltonianError::NonFiniteScore { .. })
        ));
    }

    #[test]
    fn h_bound_with_constant_sigma_is_flat_in_q() {
        let p = linear_drift(-1.0, 1.0, ControlMode::DiffusionControl1D);
        let q = ActionQuadrature::for_interval(-1.0, 1.0).unwrap();
        let samples: Vec<_> = (0..50).map(|i| (0.0, 0.5, i as f64 * 4.0)).collect();
        let hs: Vec<f64> =
            samples.iter().map(|&(x, z, qq)| hamiltonian(&p, &q, x, z, Some(qq)).unwrap().residual_h).collect();
        for h in &hs {
            assert_abs_diff_eq!(*h, hs[0], epsilon = 1e-12);
        }
        let r = verify_h_bound(&p, &q, &samples, 0.1, 0.0).unwrap();
        assert!(!r.superlinear);
        assert_abs_diff_eq!(r.fitted_c_eps, r.max_abs_h, epsilon = 1e-12);
        assert!(verify_h_bound(&p, &q, &[], 0.1, 0.0).is_err());
    }
}
