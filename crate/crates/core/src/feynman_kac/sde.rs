use std::sync::Arc;

use nalgebra::{SMatrix, SVector};

/// Diffusion `dX = b(X) dt + sigma(X) dW` in `R^D`, `sigma` square.
pub trait Sde<const D: usize>: Sync {
    fn drift(&self, x: &SVector<f64, D>) -> SVector<f64, D>;

    /// `db_i / dx_k`.
    fn drift_jacobian(&self, x: &SVector<f64, D>) -> SMatrix<f64, D, D>;

    fn sigma(&self, x: &SVector<f64, D>) -> SMatrix<f64, D, D>;

    /// `d sigma_ij / dx_k` for column `j`, as a matrix indexed `(i, k)`.
    fn sigma_column_jacobian(&self, _x: &SVector<f64, D>, _j: usize) -> SMatrix<f64, D, D> {
        SMatrix::zeros()
    }

    /// Zero drift and identity volatility.
    fn is_standard_brownian(&self) -> bool {
        false
    }
}

/// Standard Brownian motion.
#[derive(Debug, Clone, Copy, Default)]
pub struct BrownianMotion;

impl<const D: usize> Sde<D> for BrownianMotion {
    fn drift(&self, _x: &SVector<f64, D>) -> SVector<f64, D> {
        SVector::zeros()
    }

    fn drift_jacobian(&self, _x: &SVector<f64, D>) -> SMatrix<f64, D, D> {
        SMatrix::zeros()
    }

    fn sigma(&self, _x: &SVector<f64, D>) -> SMatrix<f64, D, D> {
        SMatrix::identity()
    }

    fn is_standard_brownian(&self) -> bool {
        true
    }
}

/// `dX = A X dt + S dW` with constant matrices.
#[derive(Debug, Clone, Copy)]
pub struct LinearSde<const D: usize> {
    pub a: SMatrix<f64, D, D>,
    pub s: SMatrix<f64, D, D>,
}

impl<const D: usize> Sde<D> for LinearSde<D> {
    fn drift(&self, x: &SVector<f64, D>) -> SVector<f64, D> {
        self.a * x
    }

    fn drift_jacobian(&self, _x: &SVector<f64, D>) -> SMatrix<f64, D, D> {
        self.a
    }

    fn sigma(&self, _x: &SVector<f64, D>) -> SMatrix<f64, D, D> {
        self.s
    }
}

type Scalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Scalar SDE from closures for `b`, `b'`, `sigma`, `sigma'`.
#[derive(Clone)]
pub struct ScalarSde {
    drift: Scalar,
    drift_dx: Scalar,
    sigma: Scalar,
    sigma_dx: Scalar,
}

impl ScalarSde {
    pub fn new(
        drift: impl Fn(f64) -> f64 + Send + Sync + 'static,
        drift_dx: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sigma_dx: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { drift: Arc::new(drift), drift_dx: Arc::new(drift_dx), sigma: Arc::new(sigma), sigma_dx: Arc::new(sigma_dx) }
    }

    /// Unit volatility with the given drift.
    pub fn unit_sigma(
        drift: impl Fn(f64) -> f64 + Send + Sync + 'static,
        drift_dx: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(drift, drift_dx, |_| 1.0, |_| 0.0)
    }
}

impl Sde<1> for ScalarSde {
    fn drift(&self, x: &SVector<f64, 1>) -> SVector<f64, 1> {
        SVector::from([(self.drift)(x[0])])
    }

    fn drift_jacobian(&self, x: &SVector<f64, 1>) -> SMatrix<f64, 1, 1> {
        SMatrix::from([[(self.drift_dx)(x[0])]])
    }

    fn sigma(&self, x: &SVector<f64, 1>) -> SMatrix<f64, 1, 1> {
        SMatrix::from([[(self.sigma)(x[0])]])
    }

    fn sigma_column_jacobian(&self, x: &SVector<f64, 1>, _j: usize) -> SMatrix<f64, 1, 1> {
        SMatrix::from([[(self.sigma_dx)(x[0])]])
    }
}

/// Piecewise-linear interpolant of values on a uniform grid, constant beyond the ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated1D {
    x_lo: f64,
    h: f64,
    values: Vec<f64>,
}

impl Tabulated1D {
    pub fn new(x_lo: f64, x_hi: f64, values: Vec<f64>) -> Self {
        assert!(values.len() >= 2 && x_hi > x_lo, "need an interval and two values");
        Self { x_lo, h: (x_hi - x_lo) / (values.len() - 1) as f64, values }
    }

    pub fn from_fn(x_lo: f64, x_hi: f64, n: usize, f: impl Fn(f64) -> f64) -> Self {
        let h = (x_hi - x_lo) / (n - 1) as f64;
        Self::new(x_lo, x_hi, (0..n).map(|i| f(x_lo + i as f64 * h)).collect())
    }

    fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let s = (x - self.x_lo) / self.h;
        let last = self.values.len() - 1;
        if !(s >= 0.0) || s >= last as f64 {
            return None;
        }
        let i = s.floor() as usize;
        Some((i, s - i as f64))
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.locate(x) {
            Some((i, t)) => self.values[i] * (1.0 - t) + self.values[i + 1] * t,
            None if x < self.x_lo => self.values[0],
            None => *self.values.last().expect("nonempty"),
        }
    }

    /// Slope of the interpolant, zero outside the table.
    pub fn slope(&self, x: f64) -> f64 {
        match self.locate(x) {
            Some((i, _)) => (self.values[i + 1] - self.values[i]) / self.h,
            None => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tabulated_interpolates_linearly() {
        let t = Tabulated1D::from_fn(0.0, 2.0, 3, |x| x * x);
        assert_eq!(t.eval(0.5), 0.5);
        assert_eq!(t.eval(1.5), 2.5);
        assert_eq!(t.slope(1.5), 3.0);
        assert_eq!(t.eval(-1.0), 0.0);
        assert_eq!(t.eval(5.0), 4.0);
        assert_eq!(t.slope(5.0), 0.0);
    }
}
