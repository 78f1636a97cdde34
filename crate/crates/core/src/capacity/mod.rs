//! Capacities `Cap`, `Cap_h`, `Cap_0`, their cell potentials and the
//! per-hole weight `J`.

pub mod axisym;
pub mod extrapolate;
pub mod jfun;
pub mod planar;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::CgOptions;
use crate::scalar::Real;

pub use axisym::{
    solve_axisym, sphere_area, AxisymGrid, AxisymProblem, AxisymSolution, CapBc, GridOptions, NodeTag,
    Obstacle, Outer, ScalarField,
};
pub use extrapolate::{extrapolate, Extrapolation, ExtrapolationModel};
pub use jfun::{eval_j, JSchedule, JTable};
pub use planar::{solve_planar, PlanarGrid, PlanarSolution};

/// Cylinder `C(l, h) = B'(0, l) x (-h, h)` in `R^N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderSpec<T> {
    pub l: T,
    pub h: T,
    pub n_dim: usize,
}

impl<T: Real> CylinderSpec<T> {
    pub fn new(l: T, h: T, n_dim: usize) -> Result<Self> {
        let c = Self { l, h, n_dim };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l > T::zero() && self.h > T::zero() && self.l.is_finite() && self.h.is_finite()) {
            return Err(invalid("cylinder", "l and h must be positive and finite"));
        }
        if self.n_dim < 3 {
            return Err(invalid("cylinder", "N must be at least 3"));
        }
        Ok(())
    }
}

/// Reference hole `T' = B'(0, radius)` in `R^d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoleSpec<T> {
    pub radius: T,
    pub d: usize,
}

impl<T: Real> HoleSpec<T> {
    pub fn ball(radius: T, d: usize) -> Result<Self> {
        let h = Self { radius, d };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > T::zero() && self.radius <= T::one()) {
            return Err(invalid("hole", "ball radius must lie in (0, 1]"));
        }
        if self.d < 2 {
            return Err(invalid("hole", "d = N - 1 must be at least 2"));
        }
        Ok(())
    }

    pub fn n_dim(&self) -> usize {
        self.d + 1
    }
}

fn cell_problem<T: Real>(cyl: &CylinderSpec<T>, hole: &HoleSpec<T>, caps: CapBc) -> Result<AxisymProblem<T>> {
    cyl.validate()?;
    hole.validate()?;
    if cyl.n_dim != hole.n_dim() {
        return Err(invalid("hole", "hole dimension must be N - 1"));
    }
    if !(hole.radius < cyl.l) {
        return Err(invalid("hole", "hole must fit strictly inside the cross-section"));
    }
    Ok(AxisymProblem {
        dim: cyl.n_dim,
        outer: Outer::Cylinder { l: cyl.l, h: cyl.h, caps },
        obstacle: Obstacle::FlatDisk { radius: hole.radius },
    })
}

/// Potential equal to one on `T' x {0}` and zero on all of `∂C(l, h)`;
/// its energy estimates `Cap(T' x {0}, C(l, h))`.
pub fn solve_cell_dirichlet<T: Real>(
    cyl: &CylinderSpec<T>,
    hole: &HoleSpec<T>,
    grid: &AxisymGrid<T>,
    opts: &CgOptions,
) -> Result<AxisymSolution<T>> {
    solve_axisym(&cell_problem(cyl, hole, CapBc::Dirichlet)?, grid, opts)
}

/// As [`solve_cell_dirichlet`] with natural conditions on the caps `z = ±h`;
/// the energy estimates `Cap_h(T', B'(0, l))`.
pub fn solve_cell_mixed<T: Real>(
    cyl: &CylinderSpec<T>,
    hole: &HoleSpec<T>,
    grid: &AxisymGrid<T>,
    opts: &CgOptions,
) -> Result<AxisymSolution<T>> {
    solve_axisym(&cell_problem(cyl, hole, CapBc::Neumann)?, grid, opts)
}

/// Planar problem on `B'(0, l) \ T'`: zero on `T'`, one on `∂B'(0, l)`.
/// The energy estimates `Cap_0(T', B'(0, l))`.
pub fn solve_cell_planar<T: Real>(
    l: T,
    hole: &HoleSpec<T>,
    grid: &PlanarGrid<T>,
    opts: &CgOptions,
) -> Result<PlanarSolution<T>> {
    hole.validate()?;
    let tol = T::lit(1e-12) * l;
    let (a, b) = (grid.nodes[0], *grid.nodes.last().unwrap());
    if (a - hole.radius).abs() > tol || (b - l).abs() > tol {
        return Err(invalid("grid", "planar grid must span [radius, l]"));
    }
    solve_planar(hole.d, grid, opts)
}

/// Refinement schedule for meridian grids. Lengths are in units of the
/// hole radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSchedule {
    /// Fine spacing on the coarsest level.
    pub h: f64,
    /// Number of levels, each halving all spacings.
    pub levels: usize,
    pub q: f64,
    pub hmax: f64,
    pub fine_extent: f64,
    /// Convergence order assumed by the Richardson step.
    pub order: f64,
    pub cg_tol: f64,
}

impl Default for GridSchedule {
    fn default() -> Self {
        Self { h: 1.0 / 8.0, levels: 3, q: 1.2, hmax: 16.0, fine_extent: 1.5, order: 1.0, cg_tol: 1e-10 }
    }
}

impl GridSchedule {
    pub fn grid_options<T: Real>(&self, radius: T) -> GridOptions<T> {
        GridOptions {
            h: T::lit(self.h) * radius,
            q: T::lit(self.q),
            hmax: T::lit(self.hmax) * radius,
            fine_extent: T::lit(self.fine_extent),
        }
    }

    pub fn cg(&self) -> CgOptions {
        CgOptions::with_tol(self.cg_tol)
    }
}

/// Refinement schedule for the planar radial grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarSchedule {
    /// Cells per unit of `ln(l / radius)` on the coarsest level.
    pub cells_per_log: f64,
    pub levels: usize,
    pub cg_tol: f64,
}

impl Default for PlanarSchedule {
    fn default() -> Self {
        Self { cells_per_log: 16.0, levels: 3, cg_tol: 1e-12 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "snake_case")]
pub enum DomainSpec {
    Cylinder { l: f64, h: f64, n_dim: usize, caps: CapBc },
    Ball { radius: f64, n_dim: usize },
    Planar { l: f64, d: usize },
}

/// A discretized capacity with its refinement history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityEstimate {
    /// Value on the finest grid.
    pub value: f64,
    /// Characteristic spacing of each level, coarse to fine.
    pub spacings: Vec<f64>,
    pub values: Vec<f64>,
    pub extrapolated: f64,
    /// Largest final relative CG residual over the levels.
    pub residual: f64,
    pub iterations: Vec<usize>,
    pub domain: DomainSpec,
    pub model: ExtrapolationModel,
    pub warnings: Vec<String>,
}

impl CapacityEstimate {
    fn from_levels(spacings: Vec<f64>, values: Vec<f64>, residual: f64, iterations: Vec<usize>, domain: DomainSpec, order: f64) -> Result<Self> {
        let model = ExtrapolationModel::Richardson { order };
        let mut warnings = Vec::new();
        let diffs: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
        if diffs.windows(2).any(|d| d[0] * d[1] < 0.0) {
            warnings.push("non-monotone refinement sequence".to_string());
        }
        let extrapolated = if values.len() >= 2 {
            // Use the two finest levels only: coarse levels are usually
            // outside the asymptotic range.
            let n = values.len();
            let tail: Vec<(f64, f64)> = (n - 2..n).map(|k| (spacings[k], values[k])).collect();
            extrapolate(&tail, &model)?.limit
        } else {
            values[0]
        };
        Ok(Self {
            value: *values.last().unwrap(),
            spacings,
            values,
            extrapolated,
            residual,
            iterations,
            domain,
            model,
            warnings,
        })
    }
}

fn domain_of<T: Real>(p: &AxisymProblem<T>) -> DomainSpec {
    match p.outer {
        Outer::Cylinder { l, h, caps } => DomainSpec::Cylinder { l: l.as_f64(), h: h.as_f64(), n_dim: p.dim, caps },
        Outer::Ball { radius } => DomainSpec::Ball { radius: radius.as_f64(), n_dim: p.dim },
    }
}

/// Solves `p` on a nested sequence of grids and extrapolates to zero spacing.
pub fn cap_axisym<T: Real>(p: &AxisymProblem<T>, sched: &GridSchedule) -> Result<CapacityEstimate> {
    if sched.levels == 0 {
        return Err(invalid("levels", "need at least one level"));
    }
    let radius = p.obstacle.radius();
    let mut grid = AxisymGrid::graded(p, &sched.grid_options(radius))?;
    let (mut spacings, mut values, mut its) = (Vec::new(), Vec::new(), Vec::new());
    let mut residual = 0.0f64;
    let mut h = sched.h * radius.as_f64();
    for level in 0..sched.levels {
        if level > 0 {
            grid = grid.refined();
            h /= 2.0;
        }
        let sol = solve_axisym(p, &grid, &sched.cg())?;
        spacings.push(h);
        values.push(sol.energy.as_f64());
        its.push(sol.report.iterations);
        residual = residual.max(sol.report.residual);
    }
    CapacityEstimate::from_levels(spacings, values, residual, its, domain_of(p), sched.order)
}

/// Classical capacity of an obstacle in a bounded domain.
pub fn cap_classical<T: Real>(p: &AxisymProblem<T>, sched: &GridSchedule) -> Result<CapacityEstimate> {
    cap_axisym(p, sched)
}

/// `Cap(T' x {0}, C(l, h))` with Dirichlet conditions on the whole boundary.
pub fn cap_cylinder<T: Real>(hole: &HoleSpec<T>, l: T, h: T, sched: &GridSchedule) -> Result<CapacityEstimate> {
    let cyl = CylinderSpec::new(l, h, hole.n_dim())?;
    cap_axisym(&cell_problem(&cyl, hole, CapBc::Dirichlet)?, sched)
}

/// Strip capacity `Cap_h(T', B'(0, l))`.
pub fn cap_strip<T: Real>(hole: &HoleSpec<T>, l: T, h: T, sched: &GridSchedule) -> Result<CapacityEstimate> {
    let cyl = CylinderSpec::new(l, h, hole.n_dim())?;
    cap_axisym(&cell_problem(&cyl, hole, CapBc::Neumann)?, sched)
}

/// Planar capacity `Cap_0(T', B'(0, l))`.
pub fn cap_planar<T: Real>(hole: &HoleSpec<T>, l: T, sched: &PlanarSchedule) -> Result<CapacityEstimate> {
    hole.validate()?;
    if !(l > hole.radius) {
        return Err(invalid("l", "need l > hole radius"));
    }
    if sched.levels == 0 {
        return Err(invalid("levels", "need at least one level"));
    }
    let logs = (l / hole.radius).ln().as_f64();
    let n0 = ((sched.cells_per_log * logs).ceil() as usize).max(4);
    let mut grid = PlanarGrid::log_spaced(hole.radius, l, n0)?;
    let opts = CgOptions::with_tol(sched.cg_tol);
    let (mut spacings, mut values, mut its) = (Vec::new(), Vec::new(), Vec::new());
    let mut residual = 0.0f64;
    for level in 0..sched.levels {
        if level > 0 {
            grid = grid.refined();
        }
        let sol = solve_cell_planar(l, hole, &grid, &opts)?;
        spacings.push(grid.log_step().as_f64());
        values.push(sol.energy.as_f64());
        its.push(sol.report.iterations);
        residual = residual.max(sol.report.residual);
    }
    CapacityEstimate::from_levels(spacings, values, residual, its, DomainSpec::Planar { l: l.as_f64(), d: hole.d }, 2.0)
}

#[cfg(test)]
mod tests;
