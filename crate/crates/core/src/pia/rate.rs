//! Classification of error sequences by convergence speed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor relative to the largest entry below which decrease is not resolved.
pub const RELATIVE_FLOOR: f64 = 1e-12;
/// Minimum `R^2` of the log-linear fit for an exponential rate.
pub const EXPONENTIAL_R2: f64 = 0.98;
/// Growth over a 3-step window that counts as divergence.
pub const DIVERGENCE_GROWTH: f64 = 1.1;
/// Lower bound on the double-log slope for a super-exponential rate.
pub const SUPER_SLOPE_MIN: f64 = 0.5 * std::f64::consts::LN_2;
/// Relative margin by which consecutive ratios must drop.
const RATIO_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("need at least 4 entries, got {0}")]
    TooShort(usize),
    #[error("entry {index} is not positive and finite: {value}")]
    NonPositive { index: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateClass {
    SuperExponential,
    Exponential,
    Stalled,
    Divergent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub classification: RateClass,
    /// `eps_n ~ eta^n` (exponential) or `eta^(2^n)` (super-exponential).
    pub eta: Option<f64>,
    /// Resolution floor used to trim the sequence.
    pub floor: f64,
    /// Slope of the fit that decided the class (`ln eps` or `ln(-ln eps)` against `n`).
    pub slope: Option<f64>,
    /// `R^2` of the log-linear fit, when one was made.
    pub r_squared: Option<f64>,
    /// Entries before the floor or the first stall.
    pub pre_floor_len: usize,
}

/// Least squares `y = a + b x`; returns `(a, b, r^2)`.
fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let b = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (my - b * mx, b, r2)
}

/// Fits `eps_0, eps_1, ..` indexed by position.
pub fn fit_rate(eps: &[f64]) -> Result<RateFit, RateError> {
    check_positive(eps.iter().copied())?;
    fit_points(&indexed(eps), 0.0)
}

/// As [`fit_rate`], with an absolute resolution floor; entries at or below
/// it (zeros included) end the informative part of the sequence.
pub fn fit_rate_floored(eps: &[f64], abs_floor: f64) -> Result<RateFit, RateError> {
    if let Some(index) = eps.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(RateError::NonPositive { index, value: eps[index] });
    }
    fit_points(&indexed(eps), abs_floor)
}

/// Fits `(n, eps_n)` pairs with arbitrary, increasing `n`.
pub fn fit_rate_indexed(points: &[(f64, f64)]) -> Result<RateFit, RateError> {
    check_positive(points.iter().map(|p| p.1))?;
    fit_points(points, 0.0)
}

fn indexed(eps: &[f64]) -> Vec<(f64, f64)> {
    eps.iter().enumerate().map(|(i, &e)| (i as f64, e)).collect()
}

fn check_positive(values: impl Iterator<Item = f64>) -> Result<(), RateError> {
    for (index, value) in values.enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(RateError::NonPositive { index, value });
        }
    }
    Ok(())
}

fn fit_points(points: &[(f64, f64)], abs_floor: f64) -> Result<RateFit, RateError> {
    if points.len() < 4 {
        return Err(RateError::TooShort(points.len()));
    }
    let emax = points.iter().map(|p| p.1).fold(0.0, f64::max);
    let floor = abs_floor.max(RELATIVE_FLOOR * emax);
    let above = points.iter().position(|p| p.1 <= floor).unwrap_or(points.len());

    let mut fit = RateFit {
        classification: RateClass::Stalled,
        eta: None,
        floor,
        slope: None,
        r_squared: None,
        pre_floor_len: 0,
    };

    let live = &points[..above];
    if live.windows(4).any(|w| w[3].1 >= DIVERGENCE_GROWTH * w[0].1) {
        fit.classification = RateClass::Divergent;
        fit.pre_floor_len = above;
        return Ok(fit);
    }

    // stop at the first stall once the sequence has started to decrease
    let e0 = live.first().map_or(0.0, |p| p.1);
    let mut end = live.len();
    for i in 1..live.len() {
        if live[i - 1].1 < e0 && live[i].1 >= live[i - 1].1 {
            end = i;
            break;
        }
    }
    let pre = &live[..end];
    fit.pre_floor_len = pre.len();
    if pre.len() < 3 {
        return Ok(fit);
    }

    let ratios: Vec<f64> = pre.windows(2).map(|w| w[1].1 / w[0].1).collect();
    let shrinking = ratios[0] < 1.0 && ratios.windows(2).all(|r| r[1] < r[0] * (1.0 - RATIO_MARGIN));
    let sub_unit: Vec<(f64, f64)> = pre.iter().filter(|p| p.1 < 1.0).map(|p| (p.0, (-p.1.ln()).ln())).collect();
    if shrinking && sub_unit.len() >= 2 {
        let (a, b, _) = linear_fit(&sub_unit);
        if b >= SUPER_SLOPE_MIN {
            fit.classification = RateClass::SuperExponential;
            fit.slope = Some(b);
            fit.eta = Some((-a.exp()).exp());
            return Ok(fit);
        }
    }

    let logs: Vec<(f64, f64)> = pre.iter().map(|p| (p.0, p.1.ln())).collect();
    let (_, b, r2) = linear_fit(&logs);
    fit.r_squared = Some(r2);
    fit.slope = Some(b);
    if b < 0.0 && r2 >= EXPONENTIAL_R2 {
        fit.classification = RateClass::Exponential;
        fit.eta = Some(b.exp());
    }
    Ok(fit)
}

/// `min(eps, eps^2)`.
pub fn i_eps(eps: f64) -> f64 {
    eps.min(eps * eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn doubly_exponential_sequence() {
        let eps: Vec<f64> = (1..=8).map(|n| 0.5f64.powi(1 << n)).collect();
        let fit = fit_rate(&eps).unwrap();
        assert_eq!(fit.classification, RateClass::SuperExponential);
        assert!((fit.slope.unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn geometric_sequence() {
        let eps: Vec<f64> = (1..=12).map(|n| 0.7f64.powi(n)).collect();
        let fit = fit_rate(&eps).unwrap();
        assert_eq!(fit.classification, RateClass::Exponential);
        assert!((fit.eta.unwrap() - 0.7).abs() < 0.01);
    }

    #[test]
    fn growing_sequence() {
        let eps: Vec<f64> = (1..=8).map(|n| (4.0f64 / 3.0).powi(n)).collect();
        assert_eq!(fit_rate(&eps).unwrap().classification, RateClass::Divergent);
    }

    #[test]
    fn flat_sequence_stalls() {
        assert_eq!(fit_rate(&[1.0; 6]).unwrap().classification, RateClass::Stalled);
    }

    #[test]
    fn indexed_odd_iterates() {
        let pts: Vec<(f64, f64)> = [1, 3, 5, 7, 9].iter().map(|&n| (n as f64, (2.0f64 / 3.0).powi(n))).collect();
        let fit = fit_rate_indexed(&pts).unwrap();
        assert_eq!(fit.classification, RateClass::Exponential);
        assert!((fit.eta.unwrap() - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn floored_sequence_trims_tail() {
        let eps = [0.3, 0.03, 3e-4, 3e-8, 1e-14, 0.0, 2e-14];
        let fit = fit_rate_floored(&eps, 1e-12).unwrap();
        assert_eq!(fit.pre_floor_len, 4);
        assert_eq!(fit.classification, RateClass::SuperExponential);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(fit_rate(&[1.0, 0.5, 0.2]), Err(RateError::TooShort(3)));
        assert!(matches!(fit_rate(&[1.0, 0.5, 0.0, 0.1]), Err(RateError::NonPositive { index: 2, .. })));
        assert!(fit_rate_floored(&[1.0, 0.5, f64::NAN, 0.1], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn eta_present_iff_rate_class(eps in prop::collection::vec(1e-20f64..10.0, 4..20)) {
            let fit = fit_rate(&eps).unwrap();
            let has_rate = matches!(fit.classification, RateClass::SuperExponential | RateClass::Exponential);
            prop_assert_eq!(fit.eta.is_some(), has_rate);
            if let Some(eta) = fit.eta {
                prop_assert!(eta > 0.0 && eta < 1.0);
            }
        }

        #[test]
        fn geometric_rates_are_recovered(eta in 0.05f64..0.95, n in 5usize..15) {
            let eps: Vec<f64> = (0..n).map(|k| eta.powi(k as i32)).collect();
            let fit = fit_rate(&eps).unwrap();
            prop_assert_eq!(fit.classification, RateClass::Exponential);
            prop_assert!((fit.eta.unwrap() - eta).abs() < 1e-6);
        }
    }
}
