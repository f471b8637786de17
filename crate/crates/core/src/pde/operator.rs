//! Three-point discretization of `c2 w_xx + c1 w_x` on a [`Grid1D`].

use crate::model::{Boundary, Grid1D};

use super::LinearPdeCoefficients;

/// Cell Péclet number above which central transport loses monotonicity.
pub const PECLET_LIMIT: f64 = 2.0;

/// How the transport term is discretized at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    Central,
    Upwind,
    /// Outflow at a linearly extrapolated boundary: no transport term.
    Dropped,
}

/// Tridiagonal generator `(L w)_i = lower_i w_{i-1} + diag_i w_i + upper_i w_{i+1}`,
/// indices wrapping on periodic grids.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
    pub cyclic: bool,
    pub transport: Vec<Transport>,
}

impl Operator {
    pub fn assemble(coeffs: &LinearPdeCoefficients, grid: &Grid1D) -> Self {
        let n = grid.n_nodes();
        let h = grid.spacing();
        let inv_h2 = 1.0 / (h * h);
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut transport = vec![Transport::Central; n];

        let mut interior = |i: usize, lower: &mut [f64], diag: &mut [f64], upper: &mut [f64]| {
            let (c2, c1) = (coeffs.second_order[i], coeffs.first_order[i]);
            lower[i] = c2 * inv_h2;
            diag[i] = -2.0 * c2 * inv_h2;
            upper[i] = c2 * inv_h2;
            if c1.abs() * h <= PECLET_LIMIT * c2 {
                lower[i] -= 0.5 * c1 / h;
                upper[i] += 0.5 * c1 / h;
            } else {
                transport[i] = Transport::Upwind;
                if c1 > 0.0 {
                    upper[i] += c1 / h;
                    diag[i] -= c1 / h;
                } else {
                    lower[i] -= c1 / h;
                    diag[i] += c1 / h;
                }
            }
        };

        let last = n - 1;
        match grid.boundary() {
            Boundary::Periodic => {
                for i in 0..n {
                    interior(i, &mut lower, &mut diag, &mut upper);
                }
            }
            Boundary::Reflecting => {
                for i in 1..last {
                    interior(i, &mut lower, &mut diag, &mut upper);
                }
                // mirrored ghost: D1 = 0, D2 = 2 (w_1 - w_0) / h^2
                upper[0] = 2.0 * coeffs.second_order[0] * inv_h2;
                diag[0] = -upper[0];
                lower[last] = 2.0 * coeffs.second_order[last] * inv_h2;
                diag[last] = -lower[last];
            }
            Boundary::LinearExtrapolation => {
                for i in 1..last {
                    interior(i, &mut lower, &mut diag, &mut upper);
                }
                // zero second difference; transport only when it points inward
                let c1 = coeffs.first_order[0];
                if c1 > 0.0 {
                    upper[0] = c1 / h;
                    diag[0] = -c1 / h;
                    transport[0] = Transport::Upwind;
                } else if c1 < 0.0 {
                    transport[0] = Transport::Dropped;
                }
                let c1 = coeffs.first_order[last];
                if c1 < 0.0 {
                    lower[last] = -c1 / h;
                    diag[last] = c1 / h;
                    transport[last] = Transport::Upwind;
                } else if c1 > 0.0 {
                    transport[last] = Transport::Dropped;
                }
            }
        }
        let op = Self { lower, diag, upper, cyclic: grid.boundary() == Boundary::Periodic, transport };
        let (up, dropped) = op.counts();
        if up > 0 || dropped > 0 {
            log::debug!("operator: {up} upwinded nodes, {dropped} dropped outflow terms");
        }
        op
    }

    /// Number of upwinded and dropped-transport nodes.
    pub fn counts(&self) -> (usize, usize) {
        let up = self.transport.iter().filter(|t| **t == Transport::Upwind).count();
        let dropped = self.transport.iter().filter(|t| **t == Transport::Dropped).count();
        (up, dropped)
    }

    /// True when every off-diagonal is nonnegative, so `shift - L` is an M-matrix for `shift > 0`.
    pub fn is_monotone(&self) -> bool {
        self.lower.iter().chain(&self.upper).all(|&v| v >= 0.0)
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let l = if i > 0 { w[i - 1] } else if self.cyclic { w[n - 1] } else { 0.0 };
                let r = if i + 1 < n { w[i + 1] } else if self.cyclic { w[0] } else { 0.0 };
                self.lower[i] * l + self.diag[i] * w[i] + self.upper[i] * r
            })
            .collect()
    }

    /// Sup-norm of the rows of `shift - L`.
    pub fn shifted_norm(&self, shift: f64) -> f64 {
        (0..self.len())
            .map(|i| self.lower[i].abs() + (shift - self.diag[i]).abs() + self.upper[i].abs())
            .fold(0.0, f64::max)
    }
}
