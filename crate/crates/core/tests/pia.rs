use std::f64::consts::PI;

use pia_core::model::{Boundary, ControlProblem, Grid1D, Horizon, TimeGrid};
use pia_core::pia::{pia_finite_horizon, pia_infinite_horizon, reference_solution, PiaConfig};
use pia_core::problems::smooth_benchmark;
use pia_core::{ActionQuadrature, Execution};
use proptest::prelude::*;

// Action-independent drift: the Gibbs policy never sees v, so every iterate
// after the first is the discrete fixed point.
fn uncoupled(horizon: Horizon, lambda: f64) -> ControlProblem {
    let b = ControlProblem::builder()
        .drift(|_, _| 0.0)
        .diffusion(|_, _| 1.0)
        .running_reward(|x, a| x.cos() - 0.5 * a * a)
        .terminal_reward(|_| 0.0)
        .actions(-1.0, 1.0)
        .temperature(lambda)
        .coefficient_bound(2.0)
        .sigma_min(1.0);
    match horizon {
        Horizon::Finite { horizon } => b.finite_horizon(horizon),
        Horizon::Discounted { discount } => b.discount(discount),
    }
    .build()
    .unwrap()
}

// lambda * ln of the integral of exp(-a^2 / (2 lambda)) over [-1, 1], by Simpson
fn entropy_constant(lambda: f64) -> f64 {
    let n = 20_000;
    let h = 2.0 / n as f64;
    let f = |a: f64| (-a * a / (2.0 * lambda)).exp();
    let mut s = f(-1.0) + f(1.0);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(-1.0 + i as f64 * h);
    }
    lambda * (s * h / 3.0).ln()
}

fn periodic(n: usize) -> Grid1D {
    Grid1D::new(0.0, 2.0 * PI, n, Boundary::Periodic).unwrap()
}

// symbol of -(1/2) times the central second difference on cos
fn cos_symbol(h: f64) -> f64 {
    (1.0 - h.cos()) / (h * h)
}

#[test]
fn discounted_uncoupled_matches_discrete_oracle() {
    let (rho, lambda) = (1.5, 0.7);
    let grid = periodic(128);
    let q = ActionQuadrature::for_interval(-1.0, 1.0).unwrap();
    let run = pia_infinite_horizon(&uncoupled(Horizon::Discounted { discount: rho }, lambda), &grid, &q, &PiaConfig::default())
        .unwrap();
    let c = entropy_constant(lambda);
    let amp = 1.0 / (rho + cos_symbol(grid.spacing()));
    for v in &run.values[1..] {
        for (x, got) in grid.nodes().into_iter().zip(v.values()) {
            let want = amp * x.cos() + c / rho;
            assert!((got - want).abs() < 1e-10, "x={x}: {got} vs {want}");
        }
    }
}

#[test]
fn finite_uncoupled_matches_backward_recursion() {
    let (horizon, steps, lambda) = (1.0, 20, 0.5);
    let grid = periodic(96);
    let tgrid = TimeGrid::new(horizon, steps).unwrap();
    let q = ActionQuadrature::for_interval(-1.0, 1.0).unwrap();
    let p = uncoupled(Horizon::Finite { horizon }, lambda);
    let run = pia_finite_horizon(&p, &grid, &tgrid, &q, &PiaConfig::default()).unwrap();
    let v = run.values.last().unwrap();

    let dt = tgrid.dt();
    let mu = cos_symbol(grid.spacing());
    let c = entropy_constant(lambda);
    let mut amp = 0.0;
    for k in (0..steps).rev() {
        amp = (amp + dt) / (1.0 + dt * mu);
        let constant = (steps - k) as f64 * dt * c;
        for (x, got) in grid.nodes().into_iter().zip(v.level(k).values()) {
            let want = amp * x.cos() + constant;
            assert!((got - want).abs() < 1e-10, "k={k} x={x}: {got} vs {want}");
        }
    }
    assert!(v.level(steps).values().iter().all(|&g| g == 0.0));
}

#[test]
fn reference_is_a_fixed_point_of_one_more_step() {
    let grid = Grid1D::new(-8.0, 8.0, 161, Boundary::Reflecting).unwrap();
    let q = ActionQuadrature::for_interval(-1.0, 1.0).unwrap();
    let p = smooth_benchmark().build(Horizon::Discounted { discount: 2.0 }, 1.0).unwrap();
    let r = reference_solution(&p, &grid, &q, &PiaConfig::default()).unwrap();
    assert!(r.final_delta <= 1e-11, "{}", r.final_delta);
    assert!(r.hjb_residual < 1e-8, "{}", r.hjb_residual);
}

#[test]
fn invalid_config_is_rejected() {
    let grid = periodic(32);
    let q = ActionQuadrature::for_interval(-1.0, 1.0).unwrap();
    let p = uncoupled(Horizon::Discounted { discount: 1.0 }, 1.0);
    let cfg = PiaConfig { max_iter: 0, ..PiaConfig::default() };
    assert!(pia_infinite_horizon(&p, &grid, &q, &cfg).is_err());
    let finite = uncoupled(Horizon::Finite { horizon: 1.0 }, 1.0);
    assert!(pia_infinite_horizon(&finite, &grid, &q, &PiaConfig::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn discounted_runs_improve_monotonically_within_bounds(
        rho in 0.5f64..10.0,
        lambda in 0.2f64..3.0,
        drift in 0.2f64..1.5,
        reward in 0.5f64..1.5,
    ) {
        let mut tp = smooth_benchmark();
        tp.drift_action = drift;
        tp.reward_action = reward;
        let p = tp.build(Horizon::Discounted { discount: rho }, lambda).unwrap();
        let grid = Grid1D::new(-8.0, 8.0, 121, Boundary::Reflecting).unwrap();
        let q = ActionQuadrature::for_interval(-1.0, 1.0).unwrap();

        let seq = PiaConfig { execution: Execution::Sequential, max_iter: 8, ..PiaConfig::default() };
        let par = PiaConfig { execution: Execution::Parallel, ..seq.clone() };
        let a = pia_infinite_horizon(&p, &grid, &q, &seq).unwrap();
        let b = pia_infinite_horizon(&p, &grid, &q, &par).unwrap();

        prop_assert!(a.report.worst_monotonicity() >= -1e-8, "{}", a.report.worst_monotonicity());
        prop_assert!(a.report.worst_bound_violation() <= 1e-8, "{}", a.report.worst_bound_violation());
        for (u, v) in a.values.iter().zip(&b.values) {
            prop_assert_eq!(u.values(), v.values());
        }

        // the last Gibbs policy is a probability density on the nodes
        let pol = a.policies.last().unwrap();
        for i in 0..pol.n_points {
            let mass: f64 = pol.at(i).iter().zip(q.weights()).map(|(l, w)| w * l.exp()).sum();
            prop_assert!((mass - 1.0).abs() < 1e-12, "{mass}");
        }
    }

    #[test]
    fn finite_runs_improve_monotonically_within_bounds(lambda in 0.2f64..3.0, horizon in 0.2f64..2.0) {
        let p = smooth_benchmark().build(Horizon::Finite { horizon }, lambda).unwrap();
        let grid = Grid1D::new(-8.0, 8.0, 81, Boundary::Reflecting).unwrap();
        let tgrid = TimeGrid::new(horizon, 10).unwrap();
        let q = ActionQuadrature::for_interval(-1.0, 1.0).unwrap();
        let run = pia_finite_horizon(&p, &grid, &tgrid, &q, &PiaConfig { max_iter: 6, ..PiaConfig::default() }).unwrap();
        prop_assert!(run.report.worst_monotonicity() >= -1e-8);
        prop_assert!(run.report.worst_bound_violation() <= 1e-8);
    }
}
