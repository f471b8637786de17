use serde::{Deserialize, Serialize};

use super::HamiltonianError;

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on the
/// three-term recurrence.
fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi's initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let step = p / dp;
            x -= step;
            if step.abs() <= 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Quadrature rule over the action interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionQuadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl ActionQuadrature {
    pub const DEFAULT_NODES: usize = 32;

    /// Single-panel Gauss–Legendre rule with `n` nodes.
    pub fn gauss_legendre(lo: f64, hi: f64, n: usize) -> Result<Self, HamiltonianError> {
        Self::composite(lo, hi, n, 1)
    }

    /// `panels` equal panels with an `n`-node Gauss–Legendre rule on each.
    pub fn composite(lo: f64, hi: f64, n: usize, panels: usize) -> Result<Self, HamiltonianError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(HamiltonianError::InvalidQuadrature(format!("empty interval [{lo}, {hi}]")));
        }
        if n == 0 || panels == 0 {
            return Err(HamiltonianError::InvalidQuadrature("need at least one node and one panel".into()));
        }
        let (xs, ws) = gauss_legendre_unit(n);
        let width = (hi - lo) / panels as f64;
        let mut nodes = Vec::with_capacity(n * panels);
        let mut weights = Vec::with_capacity(n * panels);
        for p in 0..panels {
            let a = lo + p as f64 * width;
            let mid = a + 0.5 * width;
            for (x, w) in xs.iter().zip(&ws) {
                nodes.push(mid + 0.5 * width * x);
                weights.push(0.5 * width * w);
            }
        }
        Ok(Self { nodes, weights })
    }

    /// Default rule for a problem's action interval.
    pub fn for_interval(lo: f64, hi: f64) -> Result<Self, HamiltonianError> {
        Self::gauss_legendre(lo, hi, Self::DEFAULT_NODES)
    }

    /// Arbitrary rule; weights must be positive.
    pub fn from_parts(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self, HamiltonianError> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(HamiltonianError::InvalidQuadrature("node/weight length mismatch".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) || nodes.iter().any(|x| !x.is_finite()) {
            return Err(HamiltonianError::InvalidQuadrature("weights must be positive and finite".into()));
        }
        Ok(Self { nodes, weights })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Sum of the weights, the measure of the interval.
    pub fn volume(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn weights_sum_to_interval_length() {
        for (lo, hi) in [(-1.0, 1.0), (0.0, 1.0), (-3.0, 7.5)] {
            let q = ActionQuadrature::for_interval(lo, hi).unwrap();
            assert_relative_eq!(q.volume(), hi - lo, max_relative = 1e-12);
            assert!(q.nodes().iter().all(|&x| x > lo && x < hi));
        }
    }

    #[test]
    fn exact_for_polynomials_up_to_order() {
        // n nodes integrate degree 2n - 1 exactly
        for n in [1usize, 2, 5, 16, 32] {
            let q = ActionQuadrature::gauss_legendre(0.0, 2.0, n).unwrap();
            let deg = 2 * n - 1;
            let exact = 2f64.powi(deg as i32 + 1) / (deg as f64 + 1.0);
            assert_relative_eq!(q.integrate(|x| x.powi(deg as i32)), exact, max_relative = 1e-12);
        }
    }

    #[test]
    fn composite_rule_integrates_exponential() {
        let q = ActionQuadrature::composite(-1.0, 1.0, 8, 4).unwrap();
        assert_relative_eq!(q.integrate(f64::exp), 1f64.exp() - (-1f64).exp(), max_relative = 1e-14);
        assert_eq!(q.len(), 32);
    }

    #[test]
    fn rejects_bad_rules() {
        assert!(ActionQuadrature::gauss_legendre(1.0, 1.0, 4).is_err());
        assert!(ActionQuadrature::gauss_legendre(0.0, 1.0, 0).is_err());
        assert!(ActionQuadrature::from_parts(vec![0.0], vec![-1.0]).is_err());
    }
}
