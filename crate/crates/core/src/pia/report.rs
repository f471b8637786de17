//! Per-iteration diagnostics and their CSV/JSON forms.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::model::{DiscreteNorms, Grid1D, TimeGrid};

use super::rate::{fit_rate_floored, RateFit};

/// Columns every iteration table starts with.
pub const CSV_HEADER: [&str; 11] = [
    "n",
    "eps0",
    "eps1",
    "eps2",
    "delta0",
    "delta1",
    "delta2",
    "policy_delta",
    "monotonicity_violation",
    "residual",
    "seconds",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    FiniteHorizon,
    InfiniteHorizon,
    Diffusion1D,
    Counterexample,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub n: usize,
    /// Distance to the reference.
    pub eps: DiscreteNorms,
    /// Distance to the previous iterate.
    pub delta: Option<DiscreteNorms>,
    /// `sup |pi^n - pi^(n-1)|`.
    pub policy_delta: Option<f64>,
    /// `min (v^n - v^(n-1))` over nodes; negative values break monotonicity.
    pub monotonicity_violation: Option<f64>,
    /// `max (v^n - upper bound)`; positive values break the a-priori bound.
    pub bound_violation: f64,
    /// Discrete HJB residual of the iterate.
    pub residual: f64,
    /// Diffusion control: `max |v_xx - (rho v - H_z v_x - h) / H_q|`.
    pub vxx_identity: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateSummary {
    pub eps1: Option<RateFit>,
    pub eps2: Option<RateFit>,
    /// Fit of `eps1 + eps2`.
    pub eps12: Option<RateFit>,
}

impl RateSummary {
    pub fn from_records(records: &[IterationRecord], floor1: f64, floor2: f64) -> Self {
        let fit = |f: &dyn Fn(&IterationRecord) -> f64, floor: f64| {
            let eps: Vec<f64> = records.iter().map(f).collect();
            fit_rate_floored(&eps, floor).ok()
        };
        Self {
            eps1: fit(&|r| r.eps.c1, floor1),
            eps2: fit(&|r| r.eps.c2, floor2),
            eps12: fit(&|r| r.eps.c1 + r.eps.c2, floor1 + floor2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationReport {
    pub regime: Regime,
    pub grid: Grid1D,
    pub time_grid: Option<TimeGrid>,
    pub records: Vec<IterationRecord>,
    pub summary: RateSummary,
    /// The last reported increment is within `stop_tol`.
    pub converged: bool,
    pub reference_iterations: usize,
    pub reference_delta: f64,
    pub reference_hjb_residual: f64,
    pub total_seconds: f64,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:?}"))
}

impl IterationReport {
    /// Worst `min (v^n - v^(n-1))` over the run.
    pub fn worst_monotonicity(&self) -> f64 {
        self.records.iter().filter_map(|r| r.monotonicity_violation).fold(f64::INFINITY, f64::min)
    }

    /// Worst excess over the a-priori bound.
    pub fn worst_bound_violation(&self) -> f64 {
        self.records.iter().map(|r| r.bound_violation).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn worst_vxx_identity(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.vxx_identity).reduce(f64::max)
    }

    pub fn eps1(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.eps.c1).collect()
    }

    pub fn eps2(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.eps.c2).collect()
    }

    pub fn last_delta(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.delta).map(|d| d.total())
    }

    /// One row per iteration. `extra` columns are appended after the
    /// standard ones; the `seconds` column is left blank unless `timings`.
    pub fn write_csv<W: Write>(&self, out: &mut W, extra: &[(&str, Vec<Option<f64>>)], timings: bool) -> io::Result<()> {
        let mut header: Vec<&str> = CSV_HEADER.to_vec();
        header.extend(extra.iter().map(|e| e.0));
        if self.regime == Regime::Diffusion1D {
            header.push("vxx_identity");
        }
        writeln!(out, "{}", header.join(","))?;
        for (row, r) in self.records.iter().enumerate() {
            let mut cells = vec![
                r.n.to_string(),
                cell(Some(r.eps.c0)),
                cell(Some(r.eps.c1)),
                cell(Some(r.eps.c2)),
                cell(r.delta.map(|d| d.c0)),
                cell(r.delta.map(|d| d.c1)),
                cell(r.delta.map(|d| d.c2)),
                cell(r.policy_delta),
                cell(r.monotonicity_violation),
                cell(Some(r.residual)),
                if timings { cell(Some(r.seconds)) } else { String::new() },
            ];
            cells.extend(extra.iter().map(|e| cell(e.1.get(row).copied().flatten())));
            if self.regime == Regime::Diffusion1D {
                cells.push(cell(r.vxx_identity));
            }
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}
