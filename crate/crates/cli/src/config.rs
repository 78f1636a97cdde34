use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sieve_core::capacity::{GridSchedule, JSchedule, PlanarSchedule};
use sieve_core::effective::H0Tag;
use sieve_core::point_process::{MarkLaw, ProcessKind, ProcessSpec};
use sieve_core::sieve_direct::{CellOptions, ThinGridOptions};

use crate::{CliError, Result};

/// A study plus the seed every random draw derives from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(flatten)]
    pub study: Study,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "kebab-case")]
pub enum Study {
    Capacity(CapacityConfig),
    Gamma(GammaConfig),
    Classify(ClassifyConfig),
    Regimes(RegimesConfig),
    SolveHomog(HomogConfig),
    SolveDirect(DirectConfig),
    TfEnergy(TfEnergyConfig),
    Convergence(ConvergenceConfig),
}

impl Study {
    pub fn name(&self) -> &'static str {
        match self {
            Study::Capacity(_) => "capacity",
            Study::Gamma(_) => "gamma",
            Study::Classify(_) => "classify",
            Study::Regimes(_) => "regimes",
            Study::SolveHomog(_) => "solve-homog",
            Study::SolveDirect(_) => "solve-direct",
            Study::TfEnergy(_) => "tf-energy",
            Study::Convergence(_) => "convergence",
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn unit_lattice() -> ProcessSpec {
    ProcessSpec { kind: ProcessKind::Lattice { offset: 0.5 }, intensity: 1.0, marks: MarkLaw::atom(1.0) }
}

fn sin_sin() -> String {
    "sin(pi*x)*sin(pi*y)".into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityKind {
    /// Ball of radius `rho` inside a ball of radius `l`.
    Classical,
    /// Flat disk in `C(l, h)` with natural conditions on the caps.
    Strip,
    /// Flat disk in `C(l, h)`, zero on the whole boundary.
    Cylinder,
    /// Ball of radius `rho` in `B'(0, l)` of dimension `N - 1`.
    Planar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CapacityConfig {
    pub kind: CapacityKind,
    pub n_dim: usize,
    pub rho: f64,
    pub l: f64,
    /// Heights for strip and cylinder runs.
    pub h: Vec<f64>,
    pub grid: GridSchedule,
    pub planar: PlanarSchedule,
}

impl Default for CapacityConfig {
    fn default() -> Self {
        Self {
            kind: CapacityKind::Strip,
            n_dim: 3,
            rho: 1.0,
            l: 4.0,
            h: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            grid: GridSchedule::default(),
            planar: PlanarSchedule::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GammaConfig {
    pub process: ProcessSpec,
    pub n_dim: usize,
    /// `delta = eps^p`.
    pub p: f64,
    /// Overrides the regime implied by `p`.
    pub h0: Option<H0Tag>,
    pub hole_radius: f64,
    pub eps: Vec<f64>,
    pub seeds: usize,
    pub j: JSchedule,
}

impl Default for GammaConfig {
    fn default() -> Self {
        Self {
            process: ProcessSpec { kind: ProcessKind::Poisson, intensity: 2.0, marks: MarkLaw::atom(1.0) },
            n_dim: 3,
            p: 1.0,
            h0: None,
            hole_radius: 1.0,
            eps: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
            seeds: 100,
            j: JSchedule::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyConfig {
    pub process: ProcessSpec,
    pub n_dim: usize,
    pub p: f64,
    pub hole_radius: f64,
    pub eps: Vec<f64>,
    pub seeds: usize,
    /// Writes the first realization at each `eps` as JSON.
    pub export_realizations: bool,
    pub thinning: (f64, f64),
    pub j: JSchedule,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            process: ProcessSpec {
                kind: ProcessKind::Poisson,
                intensity: 1.0,
                marks: MarkLaw::Discrete { atoms: vec![(0.5, 1.0), (2.0, 1.0)] },
            },
            n_dim: 3,
            p: 1.0,
            hole_radius: 1.0,
            eps: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
            seeds: 20,
            export_realizations: false,
            thinning: (0.25, 0.75),
            j: JSchedule::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegimesConfig {
    pub n_dims: Vec<usize>,
    pub p: Vec<f64>,
    /// Scale at which `a`, `delta` and `h_eps` are tabulated.
    pub eps: f64,
}

impl Default for RegimesConfig {
    fn default() -> Self {
        Self { n_dims: vec![3, 4, 5], p: vec![0.5, 1.0, 2.0, 3.0, 4.0], eps: 1.0 / 64.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HomogConfig {
    pub gamma: f64,
    pub f_plus: String,
    pub f_minus: String,
    pub dim: usize,
    pub n: usize,
    pub cg_tol: f64,
    /// Writes `u±` on all nodes as CSV.
    pub export_fields: bool,
}

impl Default for HomogConfig {
    fn default() -> Self {
        Self {
            gamma: 4.0,
            f_plus: sin_sin(),
            f_minus: format!("-{}", sin_sin()),
            dim: 2,
            n: 256,
            cg_tol: 1e-12,
            export_fields: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionChoice {
    Full,
    Odd,
    /// Odd when the sources are antisymmetric.
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    None,
    Quarter,
    /// Quarter when the holes and sources allow it.
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DirectConfig {
    /// Point set JSON; sampled from `process` when absent.
    pub points: Option<PathBuf>,
    pub process: ProcessSpec,
    pub eps: f64,
    pub p: f64,
    pub hole_radius: f64,
    /// Sources in `(x, y, ẑ)` with `ẑ = z / delta`; `f_minus` is read on
    /// `ẑ < 0`.
    pub f_plus: String,
    pub f_minus: String,
    pub grid: ThinGridOptions,
    pub reduction: ReductionChoice,
    pub symmetry: Symmetry,
    pub cg_tol: f64,
    /// Dumps both slabs node by node.
    pub export_slabs: bool,
}

fn fine_grid() -> ThinGridOptions {
    ThinGridOptions { hole_cells: 8, q: 1.5, qz: 1.5, ..ThinGridOptions::default() }
}

impl Default for DirectConfig {
    fn default() -> Self {
        Self {
            points: None,
            process: unit_lattice(),
            eps: 1.0 / 8.0,
            p: 1.0,
            hole_radius: 1.0,
            f_plus: sin_sin(),
            f_minus: format!("-{}", sin_sin()),
            grid: fine_grid(),
            reduction: ReductionChoice::Auto,
            symmetry: Symmetry::Auto,
            cg_tol: 1e-10,
            export_slabs: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TfEnergyConfig {
    pub process: ProcessSpec,
    pub p: f64,
    pub hole_radius: f64,
    pub eps: Vec<f64>,
    /// Weight `ψ(x, y)` for the bilinear limit with `v = w ψ`.
    pub psi: String,
    pub cell: CellOptions,
    pub j: JSchedule,
}

impl Default for TfEnergyConfig {
    fn default() -> Self {
        Self {
            process: unit_lattice(),
            p: 1.0,
            hole_radius: 1.0,
            eps: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0],
            psi: sin_sin(),
            cell: CellOptions::default(),
            j: JSchedule::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceConfig {
    /// `None` runs the sieve without holes.
    pub process: Option<ProcessSpec>,
    pub p: f64,
    pub hole_radius: f64,
    pub eps: Vec<f64>,
    pub f_plus: String,
    /// Defaults to the antisymmetric extension `-f+(x, y, -ẑ)`.
    pub f_minus: Option<String>,
    pub grid: ThinGridOptions,
    pub symmetry: Symmetry,
    pub cg_tol: f64,
    /// Cells per side of the limit-problem grid.
    pub homog_n: usize,
    /// Overrides the analytic `gamma`.
    pub gamma: Option<f64>,
    pub j: JSchedule,
    /// Scales whose grids would exceed this are skipped.
    pub max_unknowns: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            process: Some(unit_lattice()),
            p: 1.0,
            hole_radius: 1.0,
            eps: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0],
            f_plus: sin_sin(),
            f_minus: None,
            grid: fine_grid(),
            symmetry: Symmetry::Auto,
            cg_tol: 1e-10,
            homog_n: 256,
            gamma: None,
            j: JSchedule::default(),
            max_unknowns: 40_000_000,
        }
    }
}

pub(crate) fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Config(msg.into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_fills_defaults() {
        let c = ExperimentConfig::from_json(r#"{"study": "tf-energy", "eps": [0.25]}"#).unwrap();
        assert_eq!(c.seed, 0);
        match c.study {
            Study::TfEnergy(t) => {
                assert_eq!(t.eps, vec![0.25]);
                assert_eq!(t.psi, sin_sin());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trips() {
        let c = ExperimentConfig { seed: 3, study: Study::Convergence(ConvergenceConfig::default()) };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn unknown_study_is_an_error() {
        assert!(ExperimentConfig::from_json(r#"{"study": "nope"}"#).is_err());
    }
}
