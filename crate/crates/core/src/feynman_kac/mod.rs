//! Monte-Carlo estimates of values and derivatives of linear PDE solutions.
//!
//! Paths follow Euler–Maruyama for `X`, its tangent `dX/dx0` and the
//! running stochastic integral `I_t = int_0^t (sigma^-1 dX/dx0)^T dW`.
//! Derivatives are taken without differentiating the integrand:
//! `d/dx0 E[phi(X_t)] = E[phi(X_t) I_t / t]`, and for standard Brownian
//! motion in one dimension `d^2/dx0^2 E[phi(x0 + W_t)] = E[phi (W_t^2 - t) / t^2]`.
//!
//! Paths are simulated in fixed-size batches, each drawing from its own
//! ChaCha stream, and reduced with pairwise summation, so estimates depend
//! on the seed only and not on the number of workers.

mod sde;
mod validate;

pub use sde::{BrownianMotion, LinearSde, ScalarSde, Sde, Tabulated1D};
pub use validate::{grid_cross_check, CheckError, GridCheck, McSettings, ProbeCheck};

use nalgebra::{SMatrix, SVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::exec::{map_indexed, pairwise_sum, Execution};

/// Paths per random stream.
pub const BATCH: usize = 256;
/// Default split point between first- and second-order weights.
pub const DEFAULT_DELTA_SPLIT: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error("invalid simulation parameters: {0}")]
    InvalidSpec(String),
    #[error("a functional without terminal reward needs a positive discount and a source")]
    MissingTerminal,
    #[error("second-derivative weight requires standard Brownian motion; use the grid v_xx instead")]
    NotStandardBrownian,
    #[error("time-integrated second derivative needs the source gradient below the split time")]
    MissingSourceGradient,
    #[error("every path was rejected")]
    NoPaths,
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub n_rejected: usize,
    /// Deterministic bound on the error from truncating an infinite horizon.
    pub tail_bound: f64,
}

impl McEstimate {
    /// `|mean - target| <= k * std_error + tail_bound + slack`.
    pub fn agrees_with(&self, target: f64, k: f64, slack: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error + self.tail_bound + slack
    }
}

/// State of one path at a time level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathState<const D: usize> {
    pub t: f64,
    pub x: SVector<f64, D>,
    /// `dX_t / dx0`.
    pub tangent: SMatrix<f64, D, D>,
    /// `int_0^t (sigma^-1 dX/dx0)^T dW`; the weight is this divided by `t`.
    pub integral: SVector<f64, D>,
    /// `W_t`.
    pub w: SVector<f64, D>,
}

impl<const D: usize> PathState<D> {
    /// `N_t = I_t / t`, undefined at `t = 0`.
    pub fn weight(&self) -> SVector<f64, D> {
        self.integral / self.t
    }

    fn is_finite(&self) -> bool {
        self.x.iter().chain(self.tangent.iter()).chain(self.integral.iter()).all(|v| v.is_finite())
    }
}

/// Recipe for a reproducible family of paths; nothing is stored.
pub struct PathBundle<'a, S, const D: usize> {
    sde: &'a S,
    x0: SVector<f64, D>,
    t_max: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
    exec: Execution,
}

/// Validates the recipe for `n_paths` Euler–Maruyama paths on `[0, t_max]`
/// with step at most `dt_sim`.
pub fn simulate_paths<'a, S: Sde<D>, const D: usize>(
    sde: &'a S,
    x0: SVector<f64, D>,
    t_max: f64,
    n_paths: usize,
    dt_sim: f64,
    seed: u64,
) -> Result<PathBundle<'a, S, D>, McError> {
    if !(dt_sim > 0.0 && t_max > 0.0 && t_max.is_finite()) {
        return Err(McError::InvalidSpec(format!("need dt_sim > 0 and t_max > 0, got {dt_sim}, {t_max}")));
    }
    if n_paths < 2 {
        return Err(McError::InvalidSpec("need at least two paths".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(McError::InvalidSpec("non-finite starting point".into()));
    }
    let n_steps = (t_max / dt_sim).ceil().max(1.0) as usize;
    Ok(PathBundle { sde, x0, t_max, n_steps, n_paths, seed, exec: Execution::default() })
}

impl<S: Sde<D>, const D: usize> PathBundle<'_, S, D> {
    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn dt(&self) -> f64 {
        self.t_max / self.n_steps as f64
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn sde(&self) -> &S {
        self.sde
    }

    /// Runs every path, calling `step` at `t_0, .., t_(N-1)` before each
    /// update and `finish` at `t_N`. Returns per-path results in path order;
    /// `None` marks a path that left the finite numbers.
    pub fn visit<A, T, Init, Step, Fin>(&self, init: Init, step: Step, finish: Fin) -> Vec<Option<T>>
    where
        T: Send,
        Init: Fn() -> A + Sync,
        Step: Fn(&mut A, usize, &PathState<D>) + Sync,
        Fin: Fn(A, &PathState<D>) -> T + Sync,
    {
        let n_batches = self.n_paths.div_ceil(BATCH);
        let dt = self.dt();
        let sqrt_dt = dt.sqrt();
        let batches = map_indexed(n_batches, self.exec, |b| {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(b as u64);
            let count = BATCH.min(self.n_paths - b * BATCH);
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let mut acc = init();
                let mut s = PathState {
                    t: 0.0,
                    x: self.x0,
                    tangent: SMatrix::identity(),
                    integral: SVector::zeros(),
                    w: SVector::zeros(),
                };
                let mut ok = true;
                for k in 0..self.n_steps {
                    step(&mut acc, k, &s);
                    let dw: SVector<f64, D> = SVector::from_fn(|_, _| { let z: f64 = StandardNormal.sample(&mut rng); sqrt_dt * z });
                    if !ok {
                        continue;
                    }
                    let sig = self.sde.sigma(&s.x);
                    let Some(sig_inv) = sig.try_inverse() else {
                        ok = false;
                        continue;
                    };
                    s.integral += (sig_inv * s.tangent).transpose() * dw;
                    let mut dtan = self.sde.drift_jacobian(&s.x) * s.tangent * dt;
                    for j in 0..D {
                        let jac = self.sde.sigma_column_jacobian(&s.x, j);
                        if jac.iter().any(|v| *v != 0.0) {
                            dtan += jac * s.tangent * dw[j];
                        }
                    }
                    s.tangent += dtan;
                    s.x += self.sde.drift(&s.x) * dt + sig * dw;
                    s.w += dw;
                    s.t = if k + 1 == self.n_steps { self.t_max } else { (k + 1) as f64 * dt };
                    ok = s.is_finite();
                }
                // the random stream advances identically for rejected paths
                out.push(ok.then(|| finish(acc, &s)));
            }
            out
        });
        batches.into_iter().flatten().collect()
    }

    /// Final state of every path (`None` if rejected).
    pub fn terminal_states(&self) -> Vec<Option<PathState<D>>> {
        self.visit(|| (), |_, _, _| {}, |_, s| *s)
    }
}

/// Mean and standard error of accepted samples.
pub fn estimate(samples: &[Option<f64>], tail_bound: f64) -> Result<McEstimate, McError> {
    let kept: Vec<f64> = samples.iter().flatten().copied().collect();
    let n = kept.len();
    if n < 2 {
        return Err(McError::NoPaths);
    }
    let mean = pairwise_sum(&kept) / n as f64;
    let sq: Vec<f64> = kept.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    Ok(McEstimate {
        mean,
        std_error: (var / n as f64).sqrt(),
        n_paths: n,
        n_rejected: samples.len() - n,
        tail_bound,
    })
}

type SourceFn<'f, const D: usize> = &'f (dyn Fn(f64, &SVector<f64, D>) -> f64 + Sync);
type SourceGradFn<'f, const D: usize> = &'f (dyn Fn(f64, &SVector<f64, D>) -> SVector<f64, D> + Sync);
type TerminalFn<'f, const D: usize> = &'f (dyn Fn(&SVector<f64, D>) -> f64 + Sync);

/// `E[ int_0^T e^(-rho t) f(t, X_t) dt + e^(-rho T) g(X_T) ]` with `T = t_max`,
/// or with `T = infinity` when there is no terminal reward.
#[derive(Clone, Copy)]
pub struct Functional<'f, const D: usize> {
    source: Option<SourceFn<'f, D>>,
    source_gradient: Option<SourceGradFn<'f, D>>,
    terminal: Option<TerminalFn<'f, D>>,
    discount: f64,
    source_bound: f64,
}

impl<'f, const D: usize> Functional<'f, D> {
    /// `g(X_T)` only.
    pub fn terminal(g: TerminalFn<'f, D>) -> Self {
        Self { source: None, source_gradient: None, terminal: Some(g), discount: 0.0, source_bound: 0.0 }
    }

    /// Infinite-horizon discounted source with `sup |f| <= source_bound`.
    pub fn discounted(rho: f64, f: SourceFn<'f, D>, source_bound: f64) -> Self {
        Self { source: Some(f), source_gradient: None, terminal: None, discount: rho, source_bound }
    }

    pub fn with_source(mut self, f: SourceFn<'f, D>) -> Self {
        self.source = Some(f);
        self
    }

    pub fn with_source_gradient(mut self, fx: SourceGradFn<'f, D>) -> Self {
        self.source_gradient = Some(fx);
        self
    }

    pub fn with_discount(mut self, rho: f64) -> Self {
        self.discount = rho;
        self
    }

    fn tail(&self, t_max: f64) -> Result<f64, McError> {
        if self.terminal.is_some() {
            return Ok(0.0);
        }
        if !(self.discount > 0.0) || self.source.is_none() {
            return Err(McError::MissingTerminal);
        }
        Ok((-self.discount * t_max).exp() * self.source_bound / self.discount)
    }
}

/// Monte-Carlo estimate of the functional's value at the bundle's start.
pub fn mc_value<S: Sde<D>, const D: usize>(
    bundle: &PathBundle<'_, S, D>,
    functional: &Functional<'_, D>,
) -> Result<McEstimate, McError> {
    let tail = functional.tail(bundle.t_max)?;
    let dt = bundle.dt();
    let rho = functional.discount;
    let samples = bundle.visit(
        || 0.0,
        |acc, _, s| {
            if let Some(f) = functional.source {
                *acc += (-rho * s.t).exp() * f(s.t, &s.x) * dt;
            }
        },
        |acc, s| acc + functional.terminal.map_or(0.0, |g| (-rho * s.t).exp() * g(&s.x)),
    );
    estimate(&samples, tail)
}

/// Monte-Carlo estimate of the gradient at the bundle's start.
///
/// The time integral starts at the first step: the weight is singular at 0.
pub fn mc_gradient<S: Sde<D>, const D: usize>(
    bundle: &PathBundle<'_, S, D>,
    functional: &Functional<'_, D>,
) -> Result<[McEstimate; D], McError> {
    let tail = functional.tail(bundle.t_max)?;
    let dt = bundle.dt();
    let rho = functional.discount;
    let samples = bundle.visit(
        SVector::<f64, D>::zeros,
        |acc, k, s| {
            if let (Some(f), true) = (functional.source, k > 0) {
                *acc += s.weight() * ((-rho * s.t).exp() * f(s.t, &s.x) * dt);
            }
        },
        |acc, s| acc + functional.terminal.map_or(SVector::zeros(), |g| s.weight() * ((-rho * s.t).exp() * g(&s.x))),
    );
    let mut out = Vec::with_capacity(D);
    for d in 0..D {
        let col: Vec<Option<f64>> = samples.iter().map(|s| s.map(|v| v[d])).collect();
        // the tail of the gradient is bounded by the same exponential factor
        out.push(estimate(&col, tail)?);
    }
    out.try_into().map_err(|_| McError::NoPaths)
}

/// Second derivative at the start of a standard Brownian bundle in 1D.
///
/// Terminal part: `g(x + W_T) (W_T^2 - T) / T^2`. Source part: first-order
/// weight on the source gradient for `t <= delta`, second-order weight above.
pub fn mc_second_derivative_unit_sigma<S: Sde<1>>(
    bundle: &PathBundle<'_, S, 1>,
    functional: &Functional<'_, 1>,
    delta: f64,
) -> Result<McEstimate, McError> {
    if !bundle.sde.is_standard_brownian() {
        return Err(McError::NotStandardBrownian);
    }
    let tail = functional.tail(bundle.t_max)?;
    if functional.source.is_some() && functional.source_gradient.is_none() && delta > 0.0 {
        return Err(McError::MissingSourceGradient);
    }
    let dt = bundle.dt();
    let rho = functional.discount;
    let samples = bundle.visit(
        || 0.0,
        |acc, k, s| {
            let Some(f) = functional.source else { return };
            if k == 0 {
                return;
            }
            let (t, w) = (s.t, s.w[0]);
            let disc = (-rho * t).exp() * dt;
            if t <= delta {
                let fx = functional.source_gradient.expect("checked above");
                *acc += disc * fx(t, &s.x)[0] * w / t;
            } else {
                *acc += disc * f(t, &s.x) * (w * w - t) / (t * t);
            }
        },
        |acc, s| {
            let (t, w) = (s.t, s.w[0]);
            acc + functional.terminal.map_or(0.0, |g| (-rho * t).exp() * g(&s.x) * (w * w - t) / (t * t))
        },
    );
    estimate(&samples, tail)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v1(x: f64) -> SVector<f64, 1> {
        SVector::from([x])
    }

    #[test]
    fn brownian_tangent_and_weight_are_exact() {
        let b = simulate_paths(&BrownianMotion, v1(0.3), 1.0, 500, 0.01, 7).unwrap();
        for s in b.terminal_states().into_iter().flatten() {
            assert_eq!(s.tangent[(0, 0)], 1.0);
            assert!((s.weight()[0] - s.w[0] / s.t).abs() < 1e-12);
            assert!((s.x[0] - 0.3 - s.w[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn seeds_are_deterministic_across_execution_modes() {
        let g = |x: &SVector<f64, 1>| x[0] * x[0];
        let f = Functional::terminal(&g);
        let run = |exec| {
            let b = simulate_paths(&BrownianMotion, v1(0.5), 1.0, 3000, 0.05, 11).unwrap().with_execution(exec);
            mc_value(&b, &f).unwrap()
        };
        assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
        let other = simulate_paths(&BrownianMotion, v1(0.5), 1.0, 3000, 0.05, 12).unwrap();
        assert_ne!(mc_value(&other, &f).unwrap().mean, run(Execution::Sequential).mean);
    }

    #[test]
    fn constant_source_gives_discounted_integral() {
        let f = |_: f64, _: &SVector<f64, 1>| 2.0;
        let func = Functional::discounted(1.5, &f, 2.0);
        let b = simulate_paths(&BrownianMotion, v1(0.0), 12.0, 100, 1e-3, 1).unwrap();
        let e = mc_value(&b, &func).unwrap();
        assert!(e.std_error < 1e-12);
        // left Riemann sum of a decaying exponential overshoots by O(dt)
        assert!((e.mean - 2.0 / 1.5).abs() <= e.tail_bound + 2.0 * 1e-3);
    }

    #[test]
    fn errors() {
        assert!(simulate_paths(&BrownianMotion, v1(0.0), 1.0, 100, 0.0, 1).is_err());
        let f = |_: f64, _: &SVector<f64, 1>| 1.0;
        let no_terminal = Functional { source: Some(&f), source_gradient: None, terminal: None, discount: 0.0, source_bound: 1.0 };
        let b = simulate_paths(&BrownianMotion, v1(0.0), 1.0, 100, 0.1, 1).unwrap();
        assert_eq!(mc_value(&b, &no_terminal), Err(McError::MissingTerminal));
        let ou = ScalarSde::unit_sigma(|x| -x, |_| -1.0);
        let b = simulate_paths(&ou, v1(0.0), 1.0, 100, 0.1, 1).unwrap();
        let g = |x: &SVector<f64, 1>| x[0];
        assert_eq!(
            mc_second_derivative_unit_sigma(&b, &Functional::terminal(&g), 0.1),
            Err(McError::NotStandardBrownian)
        );
    }
}
