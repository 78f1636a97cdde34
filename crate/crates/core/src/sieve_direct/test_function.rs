use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::axisym::{AxisymGrid, AxisymProblem, AxisymSolution, CapBc, GridOptions, NodeTag, Obstacle, Outer};
use crate::capacity::{solve_cell_dirichlet, solve_cell_mixed, CylinderSpec, HoleSpec};
use crate::effective::H0Tag;
use crate::error::{Result, SieveError};
use crate::grid::Axis;
use crate::linalg::{pcg, CgOptions, TripletBuilder};
use crate::point_process::{ball_components, Ball, CellList, SieveRealization};

use super::thin_grid::{SieveField, ThinGrid};

/// Discretization of the cached cell potentials, in hole radii.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellOptions {
    pub h: f64,
    pub q: f64,
    pub hmax: f64,
    pub fine_extent: f64,
    /// Ratio of the geometric lattice on which `l` (and a Dirichlet `h`)
    /// are rounded down.
    pub ladder: f64,
    pub cg_tol: f64,
}

impl Default for CellOptions {
    fn default() -> Self {
        Self { h: 1.0 / 128.0, q: 1.2, hmax: 16.0, fine_extent: 1.5, ladder: 1.05, cg_tol: 1e-10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct CellKey {
    l: i64,
    h: i64,
    neumann: bool,
}

/// Cell potentials keyed by rounded `(l, h)`; misses are solved on demand.
pub struct CellPotentialCache {
    pub opts: CellOptions,
    hole: f64,
    map: Mutex<HashMap<CellKey, Arc<AxisymSolution<f64>>>>,
}

impl CellPotentialCache {
    pub fn new(hole_radius: f64, opts: CellOptions) -> Self {
        Self { opts, hole: hole_radius, map: Mutex::new(HashMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn rung(&self, v: f64) -> i64 {
        (v.ln() / self.opts.ladder.ln() + 1e-9).floor() as i64
    }

    fn key(&self, l: f64, h: f64, neumann: bool) -> CellKey {
        let hk = if neumann { h.to_bits() as i64 } else { self.rung(h) };
        CellKey { l: self.rung(l), h: hk, neumann }
    }

    fn dims(&self, k: CellKey) -> (f64, f64) {
        let l = self.opts.ladder.powi(k.l as i32);
        let h = if k.neumann { f64::from_bits(k.h as u64) } else { self.opts.ladder.powi(k.h as i32) };
        (l, h)
    }

    fn solve(&self, k: CellKey) -> Result<Arc<AxisymSolution<f64>>> {
        let (l, h) = self.dims(k);
        let hole = HoleSpec::ball(self.hole, 2)?;
        let cyl = CylinderSpec::new(l, h, 3)?;
        let o = &self.opts;
        let go = GridOptions { h: o.h * self.hole, q: o.q, hmax: o.hmax * self.hole, fine_extent: o.fine_extent };
        let caps = if k.neumann { CapBc::Neumann } else { CapBc::Dirichlet };
        let problem = AxisymProblem {
            dim: 3,
            outer: Outer::Cylinder { l, h, caps },
            obstacle: Obstacle::FlatDisk { radius: self.hole },
        };
        let grid = AxisymGrid::graded(&problem, &go)?;
        // stretched cells need more than the default iteration budget
        let cg = CgOptions { rel_tol: o.cg_tol, max_iter: Some(grid.s.len() * grid.z.len()) };
        let sol = if k.neumann {
            solve_cell_mixed(&cyl, &hole, &grid, &cg)?
        } else {
            solve_cell_dirichlet(&cyl, &hole, &grid, &cg)?
        };
        Ok(Arc::new(sol))
    }

    /// Potential for the cell `C(l, h)` after rounding.
    pub fn get(&self, l: f64, h: f64, neumann: bool) -> Result<(Arc<AxisymSolution<f64>>, f64, f64)> {
        let k = self.key(l, h, neumann);
        if let Some(s) = self.map.lock().unwrap().get(&k) {
            let (l, h) = self.dims(k);
            return Ok((s.clone(), l, h));
        }
        let s = self.solve(k)?;
        self.map.lock().unwrap().insert(k, s.clone());
        let (l, h) = self.dims(k);
        Ok((s, l, h))
    }

    fn prefetch(&self, requests: &[(f64, f64, bool)]) -> Result<()> {
        let mut keys: Vec<CellKey> = requests.iter().map(|&(l, h, n)| self.key(l, h, n)).collect();
        keys.sort_by_key(|k| (k.l, k.h, k.neumann));
        keys.dedup();
        let missing: Vec<CellKey> = {
            let m = self.map.lock().unwrap();
            keys.into_iter().filter(|k| !m.contains_key(k)).collect()
        };
        let solved: Vec<(CellKey, Arc<AxisymSolution<f64>>)> =
            missing.into_par_iter().map(|k| Ok((k, self.solve(k)?))).collect::<Result<_>>()?;
        self.map.lock().unwrap().extend(solved);
        Ok(())
    }
}

/// The rescaled potential `η((x - eps y) / (a rho))` around one isolated point.
#[derive(Clone, Debug)]
pub struct IsolatedCell {
    pub center: [f64; 2],
    /// `a rho`.
    pub scale: f64,
    /// Rounded cylinder `C(l, h)` in cell units.
    pub l: f64,
    pub h: f64,
    pub potential: Arc<AxisymSolution<f64>>,
}

impl IsolatedCell {
    fn eta(&self, x: f64, y: f64, z: f64) -> f64 {
        let s = ((x - self.center[0]).powi(2) + (y - self.center[1]).powi(2)).sqrt() / self.scale;
        self.potential.value_at(s, z.abs() / self.scale)
    }
}

/// Discrete capacitary potential `ζ` of the cluster holes of one shield
/// component in `S' x [0, H]`.
#[derive(Clone, Debug)]
pub struct ShieldPatch {
    pub balls: Vec<Ball>,
    /// Cluster contact discs `(x, y, radius)`.
    pub holes: Vec<[f64; 3]>,
    pub x: Axis<f64>,
    pub y: Axis<f64>,
    pub z: Axis<f64>,
    pub zeta: Vec<f64>,
    pub tags: Vec<NodeTag>,
    /// `∫ |∇ζ|²` over `S' x (0, H)`.
    pub capacity: f64,
    /// Edges `(p, q, weight)` lying in `z <= delta`.
    edges: Vec<(usize, usize, f64)>,
}

impl ShieldPatch {
    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.y.len() + j) * self.x.len() + i
    }

    fn coords(&self, n: usize) -> (f64, f64, f64) {
        let nx = self.x.len();
        let ny = self.y.len();
        (self.x.node(n % nx), self.y.node((n / nx) % ny), self.z.node(n / (nx * ny)))
    }

    fn in_shield(&self, x: f64, y: f64) -> bool {
        self.balls.iter().any(|b| (x - b.center[0]).powi(2) + (y - b.center[1]).powi(2) < b.radius * b.radius)
    }

    fn zeta_at(&self, x: f64, y: f64, z: f64) -> f64 {
        let z = z.abs();
        if x < self.x.lo() || x > self.x.hi() || y < self.y.lo() || y > self.y.hi() || z > self.z.hi() {
            return 0.0;
        }
        let frac = |a: &Axis<f64>, v: f64| {
            let i = a.bracket(v);
            (i, ((v - a.node(i)) / a.gap(i)).clamp(0.0, 1.0))
        };
        let (i, tx) = frac(&self.x, x);
        let (j, ty) = frac(&self.y, y);
        let (k, tz) = frac(&self.z, z);
        let mut acc = 0.0;
        for (di, wx) in [(0, 1.0 - tx), (1, tx)] {
            for (dj, wy) in [(0, 1.0 - ty), (1, ty)] {
                for (dk, wz) in [(0, 1.0 - tz), (1, tz)] {
                    acc += wx * wy * wz * self.zeta[self.idx(i + di, j + dj, k + dk)];
                }
            }
        }
        acc
    }

    fn build(balls: Vec<Ball>, holes: Vec<[f64; 3]>, delta: f64, height: f64, cells: usize) -> Result<Self> {
        let r_min = holes.iter().map(|h| h[2]).fold(f64::INFINITY, f64::min);
        let lo = |a: usize| balls.iter().map(|b| b.center[a] - b.radius).fold(f64::INFINITY, f64::min);
        let hi = |a: usize| balls.iter().map(|b| b.center[a] + b.radius).fold(f64::NEG_INFINITY, f64::max);
        let target = 2.0 * r_min / cells as f64;
        let axis = |a: usize| {
            let (l, h) = (lo(a), hi(a));
            let n = ((h - l) / target).ceil().clamp(4.0, 240.0) as usize;
            Axis::vertex_uniform(l, h, n)
        };
        let (x, y) = (axis(0), axis(1));
        let hz = x.max_spacing().min(y.max_spacing());
        let z = Axis::vertex_graded(1.5 * r_min, hz, height, 1.3, height / 4.0)?;
        let (nx, ny, nz) = (x.len(), y.len(), z.len());
        let n = nx * ny * nz;
        let mut tags = vec![NodeTag::Interior; n];
        let mut zeta = vec![0.0; n];
        let mut patch = Self { balls, holes, x, y, z, zeta: Vec::new(), tags: Vec::new(), capacity: 0.0, edges: Vec::new() };
        for (node, tag) in tags.iter_mut().enumerate() {
            let (px, py, _) = patch.coords(node);
            let k = node / (nx * ny);
            if k == nz - 1 || !patch.in_shield(px, py) {
                *tag = NodeTag::Dirichlet0;
            } else if k == 0 && patch.holes.iter().any(|h| (px - h[0]).powi(2) + (py - h[1]).powi(2) < h[2] * h[2]) {
                *tag = NodeTag::Dirichlet1;
                zeta[node] = 1.0;
            }
        }
        // finite-volume edges with dual areas
        let mut all_edges = Vec::new();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let p = patch.idx(i, j, k);
                    let (dx, dy, dz) = (patch.x.dual(i), patch.y.dual(j), patch.z.dual(k));
                    if i + 1 < nx {
                        all_edges.push((p, patch.idx(i + 1, j, k), dy * dz / patch.x.gap(i), k, k));
                    }
                    if j + 1 < ny {
                        all_edges.push((p, patch.idx(i, j + 1, k), dx * dz / patch.y.gap(j), k, k));
                    }
                    if k + 1 < nz {
                        all_edges.push((p, patch.idx(i, j, k + 1), dx * dy / patch.z.gap(k), k, k + 1));
                    }
                }
            }
        }
        let mut slot = vec![usize::MAX; n];
        let mut free = 0;
        for (node, t) in tags.iter().enumerate() {
            if !t.is_fixed() {
                slot[node] = free;
                free += 1;
            }
        }
        let mut tb = TripletBuilder::with_capacity(free, 7 * free);
        let mut rhs = vec![0.0; free];
        for &(p, q, w, _, _) in &all_edges {
            match (tags[p].is_fixed(), tags[q].is_fixed()) {
                (false, false) => tb.add_edge(slot[p], slot[q], w),
                (false, true) => {
                    tb.add(slot[p], slot[p], w);
                    rhs[slot[p]] += w * zeta[q];
                }
                (true, false) => {
                    tb.add(slot[q], slot[q], w);
                    rhs[slot[q]] += w * zeta[p];
                }
                (true, true) => {}
            }
        }
        if free > 0 {
            let a = tb.build();
            let mut sol = vec![0.0; free];
            pcg(&a, &rhs, &mut sol, &CgOptions::with_tol(1e-10))?;
            for (node, s) in slot.iter().enumerate() {
                if *s != usize::MAX {
                    zeta[node] = sol[*s];
                }
            }
        }
        let top = delta * (1.0 + 1e-12);
        let mut cap = 0.0;
        for &(p, q, w, kp, kq) in &all_edges {
            let d = zeta[q] - zeta[p];
            cap += w * d * d;
            let (zp, zq) = (patch.z.node(kp), patch.z.node(kq));
            if zp <= top && zq <= top {
                // horizontal edges on the last plane below delta keep only the part of the dual cell within delta
                let w = if kp == kq {
                    let (a, b) = patch.z.dual_bounds(kp);
                    w * ((b.min(delta) - a).max(0.0) / (b - a))
                } else {
                    w
                };
                patch.edges.push((p, q, w));
            }
        }
        patch.capacity = cap;
        patch.zeta = zeta;
        patch.tags = tags;
        Ok(patch)
    }
}

/// Where a value of `w` comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    IsolatedBall(usize),
    ClusterCutoff(usize),
    Ambient,
}

/// The oscillating test function: `1 - η` near isolated holes, `1 - ζ` on
/// the cluster shield, `1` elsewhere.
pub struct TestFunctionField {
    pub cells: Vec<IsolatedCell>,
    pub shields: Vec<ShieldPatch>,
    pub eps: f64,
    pub a: f64,
    pub delta: f64,
    centers: Vec<Vec<f64>>,
    lookup: CellList,
    reach: f64,
}

/// Angles used for ring averages around a cell axis.
const RING: usize = 8;

fn ring_dirs() -> [(f64, f64); RING] {
    let mut out = [(0.0, 0.0); RING];
    for (k, o) in out.iter_mut().enumerate() {
        let t = (k as f64 + 0.5) * std::f64::consts::TAU / RING as f64;
        *o = (t.cos(), t.sin());
    }
    out
}

/// Builds `w` for a realization; `cache` supplies the cell potentials.
pub fn build_w(s: &SieveRealization, cache: &CellPotentialCache) -> Result<TestFunctionField> {
    let sc = *s.scaling();
    if s.classification.dimension != 2 {
        return Err(SieveError::Unsupported("test functions are built for N = 3".into()));
    }
    let neumann = match sc.h0 {
        H0Tag::Infinite => false,
        H0Tag::Finite(_) => true,
        H0Tag::Zero => return Err(SieveError::J0UndefinedAtN3),
    };
    let iso = &s.classification.isolated;
    let requests: Vec<(f64, f64, bool)> = iso
        .iter()
        .map(|p| {
            let ar = sc.a * p.mark;
            (sc.eps * p.r / ar, sc.delta / ar, neumann)
        })
        .collect();
    cache.prefetch(&requests)?;
    let mut cells = Vec::with_capacity(iso.len());
    for (p, &(l, h, n)) in iso.iter().zip(&requests) {
        let (potential, lc, hc) = cache.get(l, h, n)?;
        let center = [p.center[0] * sc.eps, p.center[1] * sc.eps];
        cells.push(IsolatedCell { center, scale: sc.a * p.mark, l: lc, h: hc, potential });
    }
    let reach = cells.iter().map(|c| c.l * c.scale).fold(0.0, f64::max);
    let centers: Vec<Vec<f64>> = cells.iter().map(|c| c.center.to_vec()).collect();
    let lookup = CellList::new(&centers, reach.max(1e-12));
    debug_assert!(cells.iter().enumerate().all(|(i, c)| {
        lookup.within(&centers, &c.center, 2.0 * reach).into_iter().all(|j| {
            j == i || {
                let d = ((c.center[0] - cells[j].center[0]).powi(2) + (c.center[1] - cells[j].center[1]).powi(2)).sqrt();
                d >= c.l * c.scale + cells[j].l * cells[j].scale - 1e-12
            }
        })
    }));

    let cluster: Vec<[f64; 3]> = s.cluster_regions().map(|c| [c.center[0], c.center[1], c.radius]).collect();
    let max_ball = s.shield.iter().map(|b| b.radius).fold(0.0, f64::max);
    let height = sc.delta.max(max_ball);
    let shields: Vec<ShieldPatch> = ball_components(&s.shield)
        .into_par_iter()
        .map(|comp| {
            let balls: Vec<Ball> = comp.iter().map(|&i| s.shield[i].clone()).collect();
            let holes: Vec<[f64; 3]> = comp.iter().map(|&i| cluster[i]).collect();
            ShieldPatch::build(balls, holes, sc.delta, height, 8)
        })
        .collect::<Result<_>>()?;
    Ok(TestFunctionField { cells, shields, eps: sc.eps, a: sc.a, delta: sc.delta, centers, lookup, reach })
}

impl TestFunctionField {
    /// Source region of the value at `(x, y, z)`.
    pub fn region_at(&self, x: f64, y: f64, z: f64) -> Region {
        for (k, p) in self.shields.iter().enumerate() {
            if z.abs() <= p.z.hi() && p.in_shield(x, y) {
                return Region::ClusterCutoff(k);
            }
        }
        if !self.cells.is_empty() {
            for i in self.lookup.within(&self.centers, &[x, y], self.reach) {
                let c = &self.cells[i];
                let d = ((x - c.center[0]).powi(2) + (y - c.center[1]).powi(2)).sqrt();
                if d < c.l * c.scale && z.abs() < c.h * c.scale {
                    return Region::IsolatedBall(i);
                }
            }
        }
        Region::Ambient
    }

    /// `w(x, y, z)`.
    pub fn value(&self, x: f64, y: f64, z: f64) -> f64 {
        match self.region_at(x, y, z) {
            Region::ClusterCutoff(k) => 1.0 - self.shields[k].zeta_at(x, y, z),
            Region::IsolatedBall(i) => 1.0 - self.cells[i].eta(x, y, z),
            Region::Ambient => 1.0,
        }
    }

    /// Energy `(1/delta) ∫ |∇w|²` of each isolated cell on the upper slab.
    pub fn cell_energies(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.scale / self.delta * c.potential.energy_upper).collect()
    }

    /// `(1/delta) ∫ |∇ζ|²` of each shield patch on `0 < z < delta`.
    pub fn shield_energies(&self) -> Vec<f64> {
        self.shields
            .iter()
            .map(|p| p.edges.iter().map(|&(a, b, w)| w * (p.zeta[b] - p.zeta[a]).powi(2)).sum::<f64>() / self.delta)
            .collect()
    }

    /// `(1/delta) ∫_{U+} |∇w|² φ(x')`.
    pub fn energy_profile(&self, phi: impl Fn(f64, f64) -> f64 + Sync) -> f64 {
        let dirs = ring_dirs();
        let cells: f64 = self
            .cells
            .par_iter()
            .map(|c| {
                let sol = &c.potential;
                let mut memo: HashMap<u64, f64> = HashMap::new();
                let mut acc = 0.0;
                for e in sol.edges.iter().filter(|e| e.upper > 0.0) {
                    let up = sol.field.values[e.p];
                    let uq = e.q.map_or(e.boundary_value, |q| sol.field.values[q]);
                    let t = e.w * e.upper * (up - uq) * (up - uq);
                    if t == 0.0 {
                        continue;
                    }
                    let sm = 0.5 * (e.sp + e.sq) * c.scale;
                    let avg = *memo.entry(sm.to_bits()).or_insert_with(|| {
                        dirs.iter().map(|(cs, sn)| phi(c.center[0] + sm * cs, c.center[1] + sm * sn)).sum::<f64>() / RING as f64
                    });
                    acc += t * avg;
                }
                acc * c.scale / self.delta
            })
            .sum();
        let shields: f64 = self
            .shields
            .iter()
            .map(|p| {
                p.edges
                    .iter()
                    .map(|&(a, b, w)| {
                        let (xa, ya, _) = p.coords(a);
                        let (xb, yb, _) = p.coords(b);
                        w * (p.zeta[b] - p.zeta[a]).powi(2) * phi(0.5 * (xa + xb), 0.5 * (ya + yb))
                    })
                    .sum::<f64>()
                    / self.delta
            })
            .sum();
        cells + shields
    }

    /// `(1/delta) ∫_{U+} ∇w · ∇v` for `v(x, y, z, w)`, which must vanish on
    /// every hole.
    pub fn bilinear_limit(&self, v: impl Fn(f64, f64, f64, f64) -> f64 + Sync) -> Result<f64> {
        let dirs = ring_dirs();
        let tol = 1e-12;
        let per_cell: Vec<(f64, usize, f64)> = self
            .cells
            .par_iter()
            .map(|c| {
                let sol = &c.potential;
                let vals = &sol.field.values;
                let ring = |s: f64, z: f64, eta: f64| {
                    let r = s * c.scale;
                    dirs.iter()
                        .map(|(cs, sn)| v(c.center[0] + r * cs, c.center[1] + r * sn, z * c.scale, 1.0 - eta))
                        .sum::<f64>()
                        / RING as f64
                };
                let mut node_v: HashMap<usize, f64> = HashMap::new();
                let (mut bad, mut worst) = (0usize, 0.0f64);
                for (n, t) in sol.field.tags.iter().enumerate() {
                    if *t == NodeTag::Dirichlet1 {
                        let (i, j) = (n % sol.grid.s.len(), n / sol.grid.s.len());
                        let (s, z) = (sol.grid.s.node(i), sol.grid.z.node(j));
                        for (cs, sn) in dirs {
                            let r = s * c.scale;
                            let val = v(c.center[0] + r * cs, c.center[1] + r * sn, z * c.scale, 0.0);
                            if val.abs() > tol {
                                bad += 1;
                                worst = worst.max(val.abs());
                            }
                        }
                    }
                }
                let mut acc = 0.0;
                for e in sol.edges.iter().filter(|e| e.upper > 0.0) {
                    let ep = vals[e.p];
                    let eq = e.q.map_or(e.boundary_value, |q| vals[q]);
                    if ep == eq {
                        continue;
                    }
                    let vp = *node_v.entry(e.p).or_insert_with(|| ring(e.sp, e.zp, ep));
                    let vq = match e.q {
                        Some(q) => *node_v.entry(q).or_insert_with(|| ring(e.sq, e.zq, eq)),
                        None => ring(e.sq, e.zq, eq),
                    };
                    // ∇w = -∇η
                    acc += e.w * e.upper * (-(eq - ep)) * (vq - vp);
                }
                (acc * c.scale / self.delta, bad, worst)
            })
            .collect();
        let mut total = 0.0;
        let (mut bad, mut worst) = (0usize, 0.0f64);
        for (a, b, w) in per_cell {
            total += a;
            bad += b;
            worst = worst.max(w);
        }
        for p in &self.shields {
            let val = |n: usize| {
                let (x, y, z) = p.coords(n);
                v(x, y, z, 1.0 - p.zeta[n])
            };
            for (n, t) in p.tags.iter().enumerate() {
                if *t == NodeTag::Dirichlet1 {
                    let a = val(n).abs();
                    if a > tol {
                        bad += 1;
                        worst = worst.max(a);
                    }
                }
            }
            let mut acc = 0.0;
            for &(a, b, w) in &p.edges {
                acc += w * (-(p.zeta[b] - p.zeta[a])) * (val(b) - val(a));
            }
            total += acc / self.delta;
        }
        if bad > 0 {
            return Err(SieveError::NotAdmissible { count: bad, max_abs: worst });
        }
        Ok(total)
    }

    /// Samples `w` on the nodes of a thin grid, forcing `w = 0` on hole
    /// columns at the mid-plane; the lower slab holds the odd extension.
    pub fn to_sieve_field(&self, g: &ThinGrid) -> (SieveField, Vec<Region>) {
        let mut f = SieveField::zeros(g);
        let np = g.plane();
        let pairs: Vec<(f64, Region)> = (0..g.slab_len())
            .into_par_iter()
            .map(|n| {
                let (c, k) = (n % np, n / np);
                let (x, y, z) = (g.x.node(c % g.nx()), g.y.node(c / g.nx()), g.z.node(k));
                let r = self.region_at(x, y, z);
                if k == 0 && g.hole[c] {
                    (0.0, r)
                } else {
                    (self.value(x, y, z).clamp(0.0, 1.0), r)
                }
            })
            .collect();
        let mut regions = Vec::with_capacity(pairs.len());
        for (n, (v, r)) in pairs.into_iter().enumerate() {
            f.upper[n] = v;
            f.lower[n] = -v;
            regions.push(r);
        }
        (f, regions)
    }
}
