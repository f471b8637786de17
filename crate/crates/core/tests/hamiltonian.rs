use pia_core::hamiltonian::{gibbs_policy, hamiltonian, verify_h_bound, ActionQuadrature};
use pia_core::model::{ControlMode, ControlProblem, Horizon};
use pia_core::problems::{diffusion_benchmark, smooth_benchmark, TrigProblem};
use proptest::prelude::*;

fn build(tp: TrigProblem, lambda: f64) -> ControlProblem {
    tp.build(Horizon::Discounted { discount: 1.0 }, lambda).unwrap()
}

fn quad() -> ActionQuadrature {
    ActionQuadrature::for_interval(-1.0, 1.0).unwrap()
}

fn h_at(p: &ControlProblem, x: f64, z: f64, q: Option<f64>) -> f64 {
    hamiltonian(p, &quad(), x, z, q).unwrap().h_val
}

// sup and inf of the raw score over a dense sweep of the action interval
fn score_range(p: &ControlProblem, x: f64, z: f64, q: f64) -> (f64, f64) {
    (0..=4000)
        .map(|i| {
            let a = -1.0 + i as f64 / 2000.0;
            let s = p.sigma(x, a);
            p.drift(x, a) * z + p.running_reward(x, a) + 0.5 * s * s * q
        })
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gibbs_density_is_normalized(x in -6.0f64..6.0, z in -30.0f64..30.0, lambda in 0.01f64..10.0) {
        let p = build(smooth_benchmark(), lambda);
        let q = quad();
        let g = gibbs_policy(&p, &q, x, z, None).unwrap();
        prop_assert!(g.density.iter().all(|&d| d >= 0.0 && d.is_finite()));
        let mass: f64 = g.density.iter().zip(q.weights()).map(|(d, w)| d * w).sum();
        prop_assert!((mass - 1.0).abs() < 1e-12, "{mass}");
        // differential entropy on an interval of length 2 is at most ln 2
        prop_assert!(g.entropy <= 2f64.ln() + 1e-12);
    }

    #[test]
    fn h_lies_between_score_extremes(x in -6.0f64..6.0, z in -10.0f64..10.0, lambda in 0.05f64..5.0) {
        let p = build(smooth_benchmark(), lambda);
        let (lo, hi) = score_range(&p, x, z, 0.0);
        let h = h_at(&p, x, z, None);
        let log_len = lambda * 2f64.ln();
        prop_assert!(h <= hi + log_len + 1e-9, "{h} > {}", hi + log_len);
        prop_assert!(h >= lo + log_len - 1e-9, "{h} < {}", lo + log_len);
    }

    #[test]
    fn h_z_is_the_derivative_and_h_is_convex(
        x in -6.0f64..6.0,
        z in -10.0f64..10.0,
        dz in 0.1f64..5.0,
        lambda in 0.1f64..5.0,
    ) {
        let p = build(smooth_benchmark(), lambda);
        let e = 1e-5;
        let fd = (h_at(&p, x, z + e, None) - h_at(&p, x, z - e, None)) / (2.0 * e);
        let hz = hamiltonian(&p, &quad(), x, z, None).unwrap().h_z;
        prop_assert!((fd - hz).abs() < 1e-6 * (1.0 + hz.abs()), "{fd} vs {hz}");
        let mid = h_at(&p, x, z, None);
        let chord = 0.5 * (h_at(&p, x, z - dz, None) + h_at(&p, x, z + dz, None));
        prop_assert!(mid <= chord + 1e-12);
    }

    #[test]
    fn diffusion_mode_derivatives(
        x in -6.0f64..6.0,
        z in -5.0f64..5.0,
        q in -5.0f64..5.0,
        lambda in 0.1f64..3.0,
    ) {
        let p = build(diffusion_benchmark(), lambda);
        let ev = hamiltonian(&p, &quad(), x, z, Some(q)).unwrap();
        let e = 1e-5;
        let fd = (h_at(&p, x, z, Some(q + e)) - h_at(&p, x, z, Some(q - e))) / (2.0 * e);
        prop_assert!((fd - ev.h_q).abs() < 1e-6, "{fd} vs {}", ev.h_q);
        // H_q is an average of sigma^2 / 2 over the policy
        let s_lo: f64 = 0.6;
        let s_hi: f64 = 1.4;
        prop_assert!(ev.h_q >= 0.5 * s_lo * s_lo && ev.h_q <= 0.5 * s_hi * s_hi);
        prop_assert!((ev.residual_h - (ev.h_val - ev.h_z * z - ev.h_q * q)).abs() < 1e-10 * (1.0 + ev.h_val.abs()));
    }

    #[test]
    fn temperature_scaling(x in -6.0f64..6.0, z in -5.0f64..5.0, lambda in 0.1f64..3.0, k in 1.5f64..4.0) {
        // H(lambda) - lambda ln|A| interpolates between the mean and the max of the score
        let p = build(smooth_benchmark(), lambda);
        let hot = p.with_temperature(lambda * k).unwrap();
        let q = quad();
        let a = hamiltonian(&p, &q, x, z, None).unwrap();
        let b = hamiltonian(&hot, &q, x, z, None).unwrap();
        prop_assert!(b.entropy >= a.entropy - 1e-12, "{} < {}", b.entropy, a.entropy);
        let off = 2f64.ln();
        prop_assert!(b.h_val - lambda * k * off <= a.h_val - lambda * off + 1e-12);
    }
}

#[test]
fn h_bound_holds_with_small_epsilon_for_large_curvature() {
    let p = build(diffusion_benchmark(), 1.0);
    let mut samples = Vec::new();
    for i in 0..=20 {
        for j in 0..=10 {
            for q in [20.0, 60.0, 120.0, 200.0, -20.0, -200.0] {
                samples.push((-4.0 + 0.4 * i as f64, -2.0 + 0.4 * j as f64, q));
            }
        }
    }
    let r = verify_h_bound(&p, &quad(), &samples, 0.01, 2.0).unwrap();
    assert!(!r.superlinear, "{r:?}");
    assert!(r.fitted_c_eps > 0.0 && r.fitted_c_eps_tenth <= r.max_abs_h, "{r:?}");
    assert!(verify_h_bound(&build(smooth_benchmark(), 1.0), &quad(), &samples, 0.05, 2.0).is_err());
}

#[test]
fn mode_mismatch_is_reported() {
    let p = build(smooth_benchmark(), 1.0);
    assert!(hamiltonian(&p, &quad(), 0.0, 0.0, Some(1.0)).is_err());
    let d = build(diffusion_benchmark(), 1.0);
    assert!(hamiltonian(&d, &quad(), 0.0, 0.0, None).is_err());
    assert_eq!(d.mode(), ControlMode::DiffusionControl1D);
}
