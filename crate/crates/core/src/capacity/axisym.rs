//! Finite-volume solver for rotationally symmetric capacity problems.
//!
//! A problem in `R^N` that is invariant under rotations of the first `N - 1`
//! coordinates reduces to the meridian half-plane `(s, z)` with `s >= 0`, and
//! the Dirichlet integral becomes `omega * ∫∫ |∇u|^2 s^(N-2) ds dz`. The `s`
//! axis is cell-centred, so no node sits on the axis where the weight
//! vanishes; the `z` axis is vertex-centred with a node row at `z = 0`.
//!
//! Curved Dirichlet boundaries are handled by cut edges: an edge from a free
//! node to a node beyond the boundary is shortened to the crossing point.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SieveError};
use crate::grid::Axis;
use crate::linalg::{pcg, CgOptions, CgReport, TripletBuilder};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapBc {
    Dirichlet,
    Neumann,
}

/// Outer domain in the meridian plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "snake_case")]
pub enum Outer<T> {
    /// `B'(0, l) x (-h, h)`, zero on the lateral side.
    Cylinder { l: T, h: T, caps: CapBc },
    /// `B(0, radius)`, zero on the sphere.
    Ball { radius: T },
}

/// Set on which the potential equals one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "obstacle", rename_all = "snake_case")]
pub enum Obstacle<T> {
    /// `B'(0, radius) x {0}`.
    FlatDisk { radius: T },
    /// `B(0, radius)`.
    Ball { radius: T },
}

impl<T: Real> Obstacle<T> {
    pub fn radius(&self) -> T {
        match self {
            Obstacle::FlatDisk { radius } | Obstacle::Ball { radius } => *radius,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisymProblem<T> {
    /// Ambient dimension `N >= 3`.
    pub dim: usize,
    pub outer: Outer<T>,
    pub obstacle: Obstacle<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeTag {
    Interior,
    Neumann,
    Dirichlet0,
    Dirichlet1,
}

impl NodeTag {
    pub fn is_fixed(self) -> bool {
        matches!(self, NodeTag::Dirichlet0 | NodeTag::Dirichlet1)
    }
}

/// Values on a structured grid with a boundary tag per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField<T> {
    pub shape: Vec<usize>,
    pub values: Vec<T>,
    pub tags: Vec<NodeTag>,
}

impl<T: Real> ScalarField<T> {
    pub fn min_max(&self) -> (T, T) {
        self.values.iter().fold((T::infinity(), T::neg_infinity()), |(a, b), v| (a.min(*v), b.max(*v)))
    }
}

/// Area of the unit sphere `S^k`.
pub fn sphere_area<T: Real>(k: usize) -> T {
    match k {
        0 => T::lit(2.0),
        1 => T::lit(2.0) * T::PI(),
        _ => T::lit(2.0) * T::PI() / T::from_usize_lossy(k - 1) * sphere_area::<T>(k - 2),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisymGrid<T> {
    /// Cell-centred radial axis starting at `s = 0`.
    pub s: Axis<T>,
    /// Vertex axis containing `z = 0`.
    pub z: Axis<T>,
}

/// Controls for graded meridian grids.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridOptions<T> {
    /// Fine spacing near the obstacle.
    pub h: T,
    /// Geometric growth ratio away from the obstacle.
    pub q: T,
    /// Upper bound on any spacing.
    pub hmax: T,
    /// Extent of the uniform region in units of the obstacle radius.
    pub fine_extent: T,
}

impl<T: Real> GridOptions<T> {
    pub fn uniform(h: T) -> Self {
        Self { h, q: T::one(), hmax: h, fine_extent: T::infinity() }
    }
}

impl<T: Real> AxisymGrid<T> {
    pub fn len(&self) -> usize {
        self.s.len() * self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.s.len() + i
    }

    pub fn refined(&self) -> Self {
        Self { s: self.s.refined(), z: self.z.refined() }
    }

    pub fn scaled(&self, f: T) -> Self {
        Self { s: self.s.scaled(f), z: self.z.scaled(f) }
    }

    pub fn z0(&self) -> Option<usize> {
        self.z.find_node(T::zero())
    }

    /// Graded grid adapted to `p`: uniform spacing `opts.h` near the obstacle
    /// (with the disk rim on a cell face), geometric growth outside.
    pub fn graded(p: &AxisymProblem<T>, opts: &GridOptions<T>) -> Result<Self> {
        let r = p.obstacle.radius();
        if !(opts.h > T::zero()) {
            return Err(invalid("h", "grid spacing must be positive"));
        }
        match p.outer {
            Outer::Cylinder { l, h, .. } => {
                let fine = (r * opts.fine_extent).min(l);
                let s = Axis::cells_graded(fine, opts.h, l, opts.q.max(T::one()), opts.hmax)?;
                let z = Axis::vertex_graded_symmetric(fine.min(h), opts.h, h, opts.q.max(T::one()), opts.hmax)?;
                Ok(Self { s, z })
            }
            Outer::Ball { radius } => {
                // uniform, with two layers of nodes outside the sphere
                let n = ((radius / opts.h).ceil().to_usize().unwrap_or(1)) + 2;
                let ext = opts.h * T::from_usize_lossy(n);
                let s = Axis::cells_uniform(T::zero(), ext, n);
                let z = Axis::vertex_uniform(-ext, ext, 2 * n);
                Ok(Self { s, z })
            }
        }
    }
}

/// One term `w (u_p - u_q)^2` of the discrete Dirichlet form. `q = None`
/// means the far end is a boundary point with value `boundary_value`.
#[derive(Clone, Copy, Debug)]
pub struct Edge<T> {
    pub p: usize,
    pub q: Option<usize>,
    pub boundary_value: T,
    pub w: T,
    /// Fraction of the term belonging to `z >= 0`.
    pub upper: T,
    pub sp: T,
    pub zp: T,
    pub sq: T,
    pub zq: T,
}

#[derive(Clone, Debug)]
pub struct AxisymSolution<T> {
    pub problem: AxisymProblem<T>,
    pub grid: AxisymGrid<T>,
    pub field: ScalarField<T>,
    /// Discrete capacity (energy of the full domain).
    pub energy: T,
    /// Part of the energy in `z >= 0`.
    pub energy_upper: T,
    pub report: CgReport,
    pub edges: Vec<Edge<T>>,
}

impl<T: Real> AxisymSolution<T> {
    fn edge_values(&self, e: &Edge<T>) -> (T, T) {
        let up = self.field.values[e.p];
        let uq = e.q.map_or(e.boundary_value, |q| self.field.values[q]);
        (up, uq)
    }

    /// Recomputes the energy from the stored field.
    pub fn energy_from_field(&self) -> (T, T) {
        let mut total = T::zero();
        let mut upper = T::zero();
        for e in &self.edges {
            let (a, b) = self.edge_values(e);
            let t = e.w * (a - b) * (a - b);
            total = total + t;
            upper = upper + t * e.upper;
        }
        (total, upper)
    }

    /// `0 <= u <= 1` up to `tol`.
    pub fn max_principle_holds(&self, tol: T) -> bool {
        self.field.values.iter().all(|v| *v >= -tol && *v <= T::one() + tol)
    }

    /// Bilinear interpolation of the potential at `(s, z)`; zero outside
    /// the domain.
    pub fn value_at(&self, s: T, z: T) -> T {
        let g = &self.grid;
        let ns = g.s.len();
        let nz = g.z.len();
        if let Outer::Cylinder { l, h, .. } = self.problem.outer {
            if s >= l || z.abs() > h {
                return T::zero();
            }
        }
        let (i0, ts, past_last) = if s <= g.s.node(0) {
            (0, T::zero(), false)
        } else if s >= g.s.node(ns - 1) {
            // between the last node and the lateral wall (value zero)
            let hi = g.s.hi();
            let t = ((s - g.s.node(ns - 1)) / (hi - g.s.node(ns - 1))).min(T::one());
            (ns - 1, t, true)
        } else {
            let i = g.s.bracket(s);
            (i, (s - g.s.node(i)) / g.s.gap(i), false)
        };
        let j = g.z.bracket(z);
        let tz = ((z - g.z.node(j)) / g.z.gap(j)).max(T::zero()).min(T::one());
        let at = |i: usize, j: usize| self.field.values[g.idx(i, j)];
        let col = |i: usize| at(i, j) * (T::one() - tz) + at(i, (j + 1).min(nz - 1)) * tz;
        if past_last {
            let outer_val = match self.problem.outer {
                Outer::Cylinder { .. } => T::zero(),
                Outer::Ball { .. } => col(ns - 1),
            };
            col(ns - 1) * (T::one() - ts) + outer_val * ts
        } else {
            col(i0) * (T::one() - ts) + col((i0 + 1).min(ns - 1)) * ts
        }
    }
}

fn inside_ball<T: Real>(s: T, z: T, r: T) -> bool {
    s * s + z * z <= r * r
}

/// Fraction `t` in (0, 1] along `p -> q` where `|p + t (q - p)| = r`.
fn sphere_crossing<T: Real>(p: (T, T), q: (T, T), r: T) -> T {
    let (ds, dz) = (q.0 - p.0, q.1 - p.1);
    let a = ds * ds + dz * dz;
    let b = T::lit(2.0) * (p.0 * ds + p.1 * dz);
    let c = p.0 * p.0 + p.1 * p.1 - r * r;
    let disc = (b * b - T::lit(4.0) * a * c).max(T::zero()).sqrt();
    let t1 = (-b - disc) / (T::lit(2.0) * a);
    let t2 = (-b + disc) / (T::lit(2.0) * a);
    let t = if t1 > T::zero() && t1 <= T::one() { t1 } else { t2 };
    t.max(T::lit(1e-3)).min(T::one())
}

fn validate<T: Real>(p: &AxisymProblem<T>, g: &AxisymGrid<T>) -> Result<()> {
    if p.dim < 3 {
        return Err(invalid("dim", "ambient dimension must be at least 3"));
    }
    if g.s.is_vertex() || !g.z.is_vertex() {
        return Err(invalid("grid", "expects a cell-centred s axis and a vertex z axis"));
    }
    if g.s.lo() != T::zero() {
        return Err(invalid("grid", "s axis must start on the symmetry axis"));
    }
    let r = p.obstacle.radius();
    if !(r > T::zero()) {
        return Err(invalid("obstacle", "radius must be positive"));
    }
    match p.outer {
        Outer::Cylinder { l, h, .. } => {
            if !(l > r && h > T::zero()) {
                return Err(invalid("outer", "obstacle must fit strictly inside the cylinder"));
            }
            if matches!(p.obstacle, Obstacle::Ball { .. }) && h <= r {
                return Err(invalid("outer", "ball obstacle taller than the cylinder"));
            }
            let tol = T::lit(1e-9) * l;
            if (g.s.hi() - l).abs() > tol || (g.z.hi() - h).abs() > tol || (g.z.lo() + h).abs() > tol {
                return Err(invalid("grid", "grid extent does not match the cylinder"));
            }
        }
        Outer::Ball { radius } => {
            if !(radius > r) {
                return Err(invalid("outer", "obstacle must fit strictly inside the ball"));
            }
            if g.s.node(g.s.len() - 1) < radius || g.z.hi() < radius || g.z.lo() > -radius {
                return Err(invalid("grid", "grid must extend beyond the outer sphere"));
            }
        }
    }
    if matches!(p.obstacle, Obstacle::FlatDisk { .. }) && g.z0().is_none() {
        return Err(invalid("grid", "flat obstacle needs a node row at z = 0"));
    }
    Ok(())
}

/// Solves the capacity problem: harmonic in the domain, one on the obstacle,
/// zero on the Dirichlet part of the boundary, natural elsewhere.
pub fn solve_axisym<T: Real>(
    p: &AxisymProblem<T>,
    g: &AxisymGrid<T>,
    opts: &CgOptions,
) -> Result<AxisymSolution<T>> {
    validate(p, g)?;
    let ns = g.s.len();
    let nz = g.z.len();
    let n = ns * nz;
    let wexp = T::from_usize_lossy(p.dim - 2);
    let omega = sphere_area::<T>(p.dim - 2);
    let z0 = g.z0();

    // node tags and fixed values
    let mut tags = vec![NodeTag::Interior; n];
    for j in 0..nz {
        let z = g.z.node(j);
        for i in 0..ns {
            let s = g.s.node(i);
            let k = g.idx(i, j);
            tags[k] = match p.outer {
                Outer::Cylinder { caps, .. } if j == 0 || j == nz - 1 => match caps {
                    CapBc::Dirichlet => NodeTag::Dirichlet0,
                    CapBc::Neumann => NodeTag::Neumann,
                },
                Outer::Ball { radius } if !(s * s + z * z < radius * radius) => NodeTag::Dirichlet0,
                _ => NodeTag::Interior,
            };
            let in_obstacle = match p.obstacle {
                Obstacle::FlatDisk { radius } => Some(j) == z0 && s < radius,
                Obstacle::Ball { radius } => inside_ball(s, z, radius),
            };
            if in_obstacle {
                tags[k] = NodeTag::Dirichlet1;
            }
        }
    }
    let fixed_value = |t: NodeTag| if t == NodeTag::Dirichlet1 { T::one() } else { T::zero() };

    // z >= 0 share of a dual interval [a, b]
    let upper_share = |a: T, b: T| {
        let (ua, ub) = (a.max(T::zero()), b.max(T::zero()));
        (ub - ua) / (b - a)
    };
    let sw = |x: T| x.powf(wexp);
    let ring = |a: T, b: T| (b.powf(wexp + T::one()) - a.powf(wexp + T::one())) / (wexp + T::one());

    let mut edges: Vec<Edge<T>> = Vec::with_capacity(2 * n + nz);
    // Registers the edge between node `a` and node or boundary point `b`.
    let mut push = |a: usize, pa: (T, T), b: Option<usize>, pb: (T, T), w: T, upper: T| {
        let ta = tags[a];
        let tb = b.map(|k| tags[k]);
        let (free, fixed_other) = (!ta.is_fixed(), tb.map_or(true, |t| t.is_fixed()));
        if ta.is_fixed() && fixed_other {
            let bv = tb.map_or(T::zero(), fixed_value);
            if fixed_value(ta) != bv {
                edges.push(Edge { p: a, q: b, boundary_value: bv, w, upper, sp: pa.0, zp: pa.1, sq: pb.0, zq: pb.1 });
            }
            return;
        }
        if free && !fixed_other {
            edges.push(Edge { p: a, q: b, boundary_value: T::zero(), w, upper, sp: pa.0, zp: pa.1, sq: pb.0, zq: pb.1 });
            return;
        }
        // exactly one end is free; orient it as `p`
        let (f, pf, o, po, to) = if free { (a, pa, b, pb, tb) } else { (b.unwrap(), pb, Some(a), pa, Some(ta)) };
        let g_val = to.map_or(T::zero(), fixed_value);
        // Cut the edge where it crosses a curved boundary.
        let mut theta = T::one();
        if o.is_some() {
            let t = to.unwrap();
            match (t, p.outer, p.obstacle) {
                (NodeTag::Dirichlet0, Outer::Ball { radius }, _) => theta = sphere_crossing(pf, po, radius),
                (NodeTag::Dirichlet1, _, Obstacle::Ball { radius }) => theta = sphere_crossing(pf, po, radius),
                _ => {}
            }
        }
        let end = (pf.0 + (po.0 - pf.0) * theta, pf.1 + (po.1 - pf.1) * theta);
        edges.push(Edge { p: f, q: None, boundary_value: g_val, w: w / theta, upper, sp: pf.0, zp: pf.1, sq: end.0, zq: end.1 });
    };

    for j in 0..nz {
        let z = g.z.node(j);
        let (za, zb) = g.z.dual_bounds(j);
        let dz = zb - za;
        let up = upper_share(za, zb);
        for i in 0..ns {
            let s = g.s.node(i);
            let k = g.idx(i, j);
            if i + 1 < ns {
                let f = g.s.dual_bounds(i).1;
                let w = omega * sw(f) * dz / g.s.gap(i);
                push(k, (s, z), Some(g.idx(i + 1, j)), (g.s.node(i + 1), z), w, up);
            } else if let Outer::Cylinder { l, .. } = p.outer {
                let w = omega * sw(l) * dz / (l - s);
                push(k, (s, z), None, (l, z), w, up);
            }
            if j + 1 < nz {
                let (fa, fb) = g.s.dual_bounds(i);
                let w = omega * ring(fa, fb) / g.z.gap(j);
                let upz = if z >= T::zero() { T::one() } else { T::zero() };
                push(k, (s, z), Some(g.idx(i, j + 1)), (s, g.z.node(j + 1)), w, upz);
            }
        }
    }

    // assemble over free nodes
    let mut map = vec![usize::MAX; n];
    let mut free = Vec::new();
    for k in 0..n {
        if !tags[k].is_fixed() {
            map[k] = free.len();
            free.push(k);
        }
    }
    if free.is_empty() {
        return Err(SieveError::Singular("no free nodes".into()));
    }
    let m = free.len();
    let mut tb = TripletBuilder::with_capacity(m, 4 * edges.len());
    let mut rhs = vec![T::zero(); m];
    let mut touched = vec![false; m];
    for e in &edges {
        let ip = map[e.p];
        if ip == usize::MAX {
            continue;
        }
        touched[ip] = true;
        match e.q {
            Some(q) if map[q] != usize::MAX => {
                touched[map[q]] = true;
                tb.add_edge(ip, map[q], e.w);
            }
            _ => {
                tb.add(ip, ip, e.w);
                rhs[ip] = rhs[ip] + e.w * e.boundary_value;
            }
        }
    }
    if touched.iter().any(|t| !t) {
        return Err(SieveError::Singular("isolated free node".into()));
    }
    let a = tb.build();
    let mut x = vec![T::zero(); m];
    let report = pcg(&a, &rhs, &mut x, opts)?;

    let mut values: Vec<T> = tags.iter().map(|t| fixed_value(*t)).collect();
    for (r, &k) in free.iter().enumerate() {
        values[k] = x[r];
    }
    let field = ScalarField { shape: vec![ns, nz], values, tags };
    let mut sol = AxisymSolution {
        problem: *p,
        grid: g.clone(),
        field,
        energy: T::zero(),
        energy_upper: T::zero(),
        report,
        edges,
    };
    let (e, eu) = sol.energy_from_field();
    sol.energy = e;
    sol.energy_upper = eu;
    Ok(sol)
}
