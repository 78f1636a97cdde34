use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SieveError};
use crate::grid::{fill_gap, Axis};
use crate::point_process::SieveRealization;

/// Controls for [`ThinGrid::build`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThinGridOptions {
    /// Cells across each hole diameter inside its patch.
    pub hole_cells: usize,
    /// Half-width of a patch in hole radii.
    pub patch_extent: f64,
    /// Growth ratio between patches.
    pub q: f64,
    /// Largest in-plane spacing, in units of `eps`.
    pub hmax: f64,
    /// Growth ratio of the vertical spacing.
    pub qz: f64,
    /// Largest vertical spacing, in units of `delta`.
    pub hz_max: f64,
    /// Resolution below which a hole is rejected.
    pub min_cells: usize,
}

impl Default for ThinGridOptions {
    fn default() -> Self {
        Self { hole_cells: 4, patch_extent: 1.5, q: 2.0, hmax: 0.25, qz: 2.0, hz_max: 0.25, min_cells: 4 }
    }
}

/// Tensor grid of `U' x [0, delta]` used for both slabs.
///
/// The in-plane axes are cell-centred on `[0, 1]` so the lateral Dirichlet
/// condition sits on faces; the vertical axis is vertex-centred with a node
/// plane on the mid-surface. A column whose centre lies in a hole is shared
/// by the two slabs at `z = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThinGrid {
    pub x: Axis<f64>,
    pub y: Axis<f64>,
    pub z: Axis<f64>,
    pub delta: f64,
    /// Per column `j * nx + i`.
    pub hole: Vec<bool>,
    /// Mirror planes at `x = 1/2` and `y = 1/2`; the axis then stops there
    /// with a zero-flux face.
    pub mirror: [bool; 2],
}

#[derive(Clone, Copy, Debug)]
struct Patch {
    lo: f64,
    hi: f64,
    h: f64,
    center: Option<f64>,
}

fn axis_faces(discs: &[(f64, f64)], opts: &ThinGridOptions, hmax: f64, end: f64) -> Vec<f64> {
    let mut patches: Vec<Patch> = discs
        .iter()
        .map(|&(c, r)| {
            let h = 2.0 * r / opts.hole_cells as f64;
            let m = (opts.patch_extent * r / h).ceil();
            Patch { lo: c - m * h, hi: c + m * h, h, center: Some(c) }
        })
        .collect();
    patches.sort_by(|a, b| a.lo.partial_cmp(&b.lo).unwrap());
    let mut merged: Vec<Patch> = Vec::new();
    for p in patches {
        if let Some(last) = merged.last_mut() {
            if p.lo < last.hi + 2.0 * last.h.max(p.h) {
                if last.center == p.center && last.h == p.h {
                    continue;
                }
                *last = Patch { lo: last.lo.min(p.lo), hi: last.hi.max(p.hi), h: last.h.min(p.h), center: None };
                continue;
            }
        }
        merged.push(p);
    }
    let mut faces = vec![0.0];
    for p in &merged {
        let inner: Vec<f64> = match p.center {
            Some(c) => {
                let m = ((p.hi - c) / p.h).round() as i64;
                (-m..=m).map(|k| c + k as f64 * p.h).collect()
            }
            None => {
                let n = ((p.hi - p.lo) / p.h).ceil().max(1.0) as usize;
                (0..=n).map(|k| p.lo + (p.hi - p.lo) * k as f64 / n as f64).collect()
            }
        };
        let inner: Vec<f64> = inner.into_iter().filter(|f| *f > 0.5 * p.h && *f < end - 0.5 * p.h).collect();
        let Some(&first) = inner.first() else { continue };
        let prev = *faces.last().unwrap();
        if first <= prev + 0.5 * p.h {
            // overlaps the previous patch; keep only what lies beyond it
            for f in inner.into_iter().filter(|f| *f > prev + 0.5 * p.h) {
                faces.push(f);
            }
            continue;
        }
        let h_left = if faces.len() > 1 { faces[faces.len() - 1] - faces[faces.len() - 2] } else { p.h };
        let mut x = prev;
        for s in fill_gap(first - prev, h_left * opts.q, p.h * opts.q, opts.q, hmax) {
            x += s;
            faces.push(x);
        }
        faces.pop();
        faces.push(first);
        faces.extend_from_slice(&inner[1..]);
    }
    let prev = *faces.last().unwrap();
    if prev < end {
        let h_left = if faces.len() > 1 { faces[faces.len() - 1] - faces[faces.len() - 2] } else { hmax };
        let mut x = prev;
        for s in fill_gap(end - prev, h_left * opts.q, hmax, opts.q, hmax) {
            x += s;
            faces.push(x);
        }
    }
    let n = faces.len() - 1;
    faces[n] = end;
    faces
}

impl ThinGrid {
    /// Graded grid: a uniform patch of `hole_cells` cells per diameter
    /// around every hole coordinate, geometric growth in between, and
    /// vertical grading from the smallest hole size.
    pub fn build(s: &SieveRealization, opts: &ThinGridOptions) -> Result<Self> {
        Self::graded(s, opts, false)
    }

    /// Grid of the quarter `(0, 1/2)^2` with mirror planes on both inner
    /// faces. Only valid when the holes are symmetric about `x = 1/2` and
    /// `y = 1/2`; the data must share that symmetry for the result to
    /// coincide with the full solve.
    pub fn build_quarter(s: &SieveRealization, opts: &ThinGridOptions) -> Result<Self> {
        if !is_quarter_symmetric(s) {
            return Err(SieveError::Unsupported("holes are not symmetric about the mid-lines".into()));
        }
        Self::graded(s, opts, true)
    }

    fn graded(s: &SieveRealization, opts: &ThinGridOptions, quarter: bool) -> Result<Self> {
        if opts.hole_cells < 2 || !(opts.q >= 1.0) || !(opts.qz >= 1.0) {
            return Err(invalid("grid options", "need hole_cells >= 2 and growth ratios >= 1"));
        }
        let sc = s.scaling();
        if s.classification.dimension != 2 {
            return Err(SieveError::Unsupported("direct solver is three-dimensional".into()));
        }
        let end = if quarter { 0.5 } else { 1.0 };
        let hmax = opts.hmax * sc.eps;
        let near = |c: f64, r: f64| c - r < end;
        let xs: Vec<(f64, f64)> =
            s.contact_regions.iter().filter(|c| near(c.center[0], c.radius)).map(|c| (c.center[0], c.radius)).collect();
        let ys: Vec<(f64, f64)> =
            s.contact_regions.iter().filter(|c| near(c.center[1], c.radius)).map(|c| (c.center[1], c.radius)).collect();
        let x = Axis::cells(axis_faces(&xs, opts, hmax, end))?;
        let y = Axis::cells(axis_faces(&ys, opts, hmax, end))?;
        let r_min = s.contact_regions.iter().map(|c| c.radius).fold(f64::INFINITY, f64::min);
        let delta = sc.delta;
        let hz_max = opts.hz_max * delta;
        let z = if r_min.is_finite() {
            let h0 = (2.0 * r_min / opts.hole_cells as f64).min(hz_max);
            Axis::vertex_graded(opts.patch_extent * r_min, h0, delta, opts.qz, hz_max)?
        } else {
            Axis::vertex_uniform(0.0, delta, 4)
        };
        let z = if z.len() < 3 { Axis::vertex_uniform(0.0, delta, 2) } else { z };
        Self::assemble(s, x, y, z, opts.min_cells, [quarter; 2])
    }

    /// Grid from explicit axes; holes are marked by column centres.
    pub fn from_axes(s: &SieveRealization, x: Axis<f64>, y: Axis<f64>, z: Axis<f64>, min_cells: usize) -> Result<Self> {
        Self::assemble(s, x, y, z, min_cells, [false; 2])
    }

    fn assemble(
        s: &SieveRealization,
        x: Axis<f64>,
        y: Axis<f64>,
        z: Axis<f64>,
        min_cells: usize,
        mirror: [bool; 2],
    ) -> Result<Self> {
        if x.is_vertex() || y.is_vertex() || !z.is_vertex() {
            return Err(invalid("grid", "needs cell-centred x, y and a vertex z axis"));
        }
        let delta = s.scaling().delta;
        let end = |m: bool| if m { 0.5 } else { 1.0 };
        if (x.lo(), x.hi(), y.lo(), y.hi()) != (0.0, end(mirror[0]), 0.0, end(mirror[1]))
            || z.lo() != 0.0
            || (z.hi() - delta).abs() > 1e-12 * delta
        {
            return Err(invalid("grid", "axes must span (0, 1)^2 x [0, delta] or its quarter"));
        }
        let (nx, ny) = (x.len(), y.len());
        let mut hole = vec![false; nx * ny];
        let mut unresolved = Vec::new();
        let mut min_res = usize::MAX;
        for (ci, c) in s.contact_regions.iter().enumerate() {
            let (cx, cy, r) = (c.center[0], c.center[1], c.radius);
            if cx - r >= x.hi() || cy - r >= y.hi() {
                continue;
            }
            let span = |a: &Axis<f64>, c0: f64| {
                let lo = a.bracket((c0 - r).max(a.node(0)));
                let hi = (a.bracket((c0 + r).min(a.node(a.len() - 1))) + 1).min(a.len() - 1);
                (lo, hi)
            };
            let (i0, i1) = span(&x, cx);
            let (j0, j1) = span(&y, cy);
            let mut widest = 0.0f64;
            for i in i0..=i1 {
                let (a, b) = x.dual_bounds(i);
                if b > cx - r && a < cx + r {
                    widest = widest.max(b - a);
                }
            }
            for j in j0..=j1 {
                let (a, b) = y.dual_bounds(j);
                if b > cy - r && a < cy + r {
                    widest = widest.max(b - a);
                }
            }
            let res = (2.0 * r / widest * (1.0 + 1e-9)).floor() as usize;
            min_res = min_res.min(res);
            if res < min_cells {
                unresolved.push(ci);
            }
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let (px, py) = (x.node(i), y.node(j));
                    if (px - cx).powi(2) + (py - cy).powi(2) < r * r {
                        hole[j * nx + i] = true;
                    }
                }
            }
        }
        if !unresolved.is_empty() {
            return Err(SieveError::UnresolvedHoles { min_cells: min_res, regions: unresolved });
        }
        Ok(Self { x, y, z, delta, hole, mirror })
    }

    pub fn nx(&self) -> usize {
        self.x.len()
    }

    pub fn ny(&self) -> usize {
        self.y.len()
    }

    pub fn nz(&self) -> usize {
        self.z.len()
    }

    pub fn plane(&self) -> usize {
        self.nx() * self.ny()
    }

    /// Nodes per slab.
    pub fn slab_len(&self) -> usize {
        self.plane() * self.nz()
    }

    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.ny() + j) * self.nx() + i
    }

    /// Copies of the computed region that tile `U'`.
    pub fn copies(&self) -> f64 {
        self.mirror.iter().map(|m| if *m { 2.0 } else { 1.0 }).product()
    }

    pub fn hole_columns(&self) -> usize {
        self.hole.iter().filter(|h| **h).count()
    }
}

fn is_quarter_symmetric(s: &SieveRealization) -> bool {
    let regions = &s.contact_regions;
    let tol = 1e-9;
    let hit = |x: f64, y: f64, r: f64| {
        regions.iter().any(|c| {
            (c.center[0] - x).abs() <= tol && (c.center[1] - y).abs() <= tol && (c.radius - r).abs() <= tol * r
        })
    };
    regions.iter().all(|c| {
        let (x, y, r) = (c.center[0], c.center[1], c.radius);
        hit(1.0 - x, y, r) && hit(x, 1.0 - y, r)
    })
}

/// Nodal values on both slabs. `lower[k]` sits at height `-z_k`; hole
/// columns carry the same value in both slabs at `k = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SieveField {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
}

impl SieveField {
    pub fn zeros(g: &ThinGrid) -> Self {
        let n = g.slab_len();
        Self { nx: g.nx(), ny: g.ny(), nz: g.nz(), upper: vec![0.0; n], lower: vec![0.0; n] }
    }

    /// Values on shared hole nodes agree between the slabs.
    pub fn is_continuous(&self, g: &ThinGrid, tol: f64) -> bool {
        g.hole.iter().enumerate().all(|(c, h)| !*h || (self.upper[c] - self.lower[c]).abs() <= tol)
    }
}
