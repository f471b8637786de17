use std::fmt;
use std::path::PathBuf;

use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::exec::Execution;
use crate::feynman_kac::McSettings;
use crate::model::{Boundary, Grid1D, ModelError};
use crate::pia::PiaConfig;
use crate::problems::TrigProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    PiaFinite,
    PiaInfinite,
    PiaDiffusion,
    Counterexample,
    McValidate,
    Audit,
}

/// A registry name or inline coefficients.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ProblemRef {
    Named(String),
    Inline(TrigProblem),
}

impl<'de> Deserialize<'de> for ProblemRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = ProblemRef;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a problem name or a table of coefficients")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<ProblemRef, E> {
                Ok(ProblemRef::Named(v.to_string()))
            }

            fn visit_map<M: MapAccess<'de>>(self, m: M) -> Result<ProblemRef, M::Error> {
                TrigProblem::deserialize(de::value::MapAccessDeserializer::new(m)).map(ProblemRef::Inline)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_nodes: usize,
    pub boundary: Boundary,
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid1D, ModelError> {
        Grid1D::new(self.x_lo, self.x_hi, self.n_nodes, self.boundary)
    }
}

impl From<Grid1D> for GridConfig {
    fn from(g: Grid1D) -> Self {
        Self { x_lo: g.x_lo(), x_hi: g.x_hi(), n_nodes: g.n_nodes(), boundary: g.boundary() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGridConfig {
    pub n_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    pub nodes: usize,
    #[serde(default = "one")]
    pub panels: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CounterexampleConfig {
    pub n_iter: usize,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self { n_iter: 9 }
    }
}

fn default_lambda() -> f64 {
    1.0
}

/// Experiment description as read from a TOML file. Unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub problem: Option<ProblemRef>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub tgrid: Option<TimeGridConfig>,
    #[serde(default)]
    pub quadrature: Option<QuadratureConfig>,
    #[serde(default)]
    pub pia: PiaConfig,
    #[serde(default)]
    pub mc: McSettings,
    #[serde(default)]
    pub counterexample: CounterexampleConfig,
    /// Write wall-clock seconds into the iteration table.
    #[serde(default)]
    pub csv_timings: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub execution: Execution,
    /// Worker threads; 0 lets the pool decide.
    #[serde(default)]
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}
