use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{pcg, CgOptions, CgReport, LinearOperator};

use super::thin_grid::{SieveField, ThinGrid};

/// Pointwise source on the two slabs. `plus` is evaluated at `z >= 0`,
/// `minus` at `z <= 0`.
pub struct ThinSource {
    pub plus: Box<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>,
    pub minus: Box<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>,
}

impl ThinSource {
    pub fn new(
        plus: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        minus: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { plus: Box::new(plus), minus: Box::new(minus) }
    }

    /// `f(x', -z) = -f(x', z)`.
    pub fn odd(plus: impl Fn(f64, f64, f64) -> f64 + Send + Sync + Clone + 'static) -> Self {
        let p = plus.clone();
        Self::new(plus, move |x, y, z| -p(x, y, -z))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Both slabs, coupled through the shared hole nodes.
    Full,
    /// Upper slab only, with `u = 0` on the holes; valid for odd sources.
    Odd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectSolution {
    pub field: SieveField,
    /// `∫ |∇u|²` over both slabs.
    pub energy: f64,
    /// `∫ f u` over both slabs.
    pub load: f64,
    pub report: CgReport,
    pub reduction: Reduction,
    pub unknowns: usize,
}

/// Finite-volume coefficients of one slab.
pub(crate) struct Stencil {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub dz: Vec<f64>,
    /// Inverse node gaps; entries `0` and `n` are the half-gaps to the
    /// lateral faces.
    pub cx: Vec<f64>,
    pub cy: Vec<f64>,
    /// Inverse vertical gaps, length `nz - 1`.
    pub cz: Vec<f64>,
}

pub(crate) fn inv_gaps(a: &crate::grid::Axis<f64>, mirror: bool) -> Vec<f64> {
    let n = a.len();
    let mut c = Vec::with_capacity(n + 1);
    c.push(1.0 / (a.node(0) - a.lo()));
    for i in 0..n - 1 {
        c.push(1.0 / a.gap(i));
    }
    c.push(if mirror { 0.0 } else { 1.0 / (a.hi() - a.node(n - 1)) });
    c
}

impl Stencil {
    pub fn new(g: &ThinGrid) -> Self {
        Self {
            nx: g.nx(),
            ny: g.ny(),
            nz: g.nz(),
            dx: (0..g.nx()).map(|i| g.x.dual(i)).collect(),
            dy: (0..g.ny()).map(|j| g.y.dual(j)).collect(),
            dz: (0..g.nz()).map(|k| g.z.dual(k)).collect(),
            cx: inv_gaps(&g.x, g.mirror[0]),
            cy: inv_gaps(&g.y, g.mirror[1]),
            cz: (0..g.nz() - 1).map(|k| 1.0 / g.z.gap(k)).collect(),
        }
    }

    fn plane(&self) -> usize {
        self.nx * self.ny
    }

    /// `y = A_slab x` where `planes[k]` holds plane `k` of the input.
    pub fn apply(&self, planes: &[&[f64]], out: &mut [f64]) {
        let (nx, ny, nz) = (self.nx, self.ny, self.nz);
        let np = self.plane();
        out.par_chunks_mut(np).enumerate().for_each(|(k, o)| {
            let u = planes[k];
            let below = if k > 0 { Some((planes[k - 1], self.cz[k - 1])) } else { None };
            let above = if k + 1 < nz { Some((planes[k + 1], self.cz[k])) } else { None };
            let dzk = self.dz[k];
            for j in 0..ny {
                let row = j * nx;
                let (cyl, cyr) = (self.cy[j], self.cy[j + 1]);
                for i in 0..nx {
                    let c = row + i;
                    let uc = u[c];
                    let left = if i > 0 { u[c - 1] } else { 0.0 };
                    let right = if i + 1 < nx { u[c + 1] } else { 0.0 };
                    let down = if j > 0 { u[c - nx] } else { 0.0 };
                    let up = if j + 1 < ny { u[c + nx] } else { 0.0 };
                    let fx = self.dy[j] * (self.cx[i] * (uc - left) + self.cx[i + 1] * (uc - right));
                    let fy = self.dx[i] * (cyl * (uc - down) + cyr * (uc - up));
                    let mut fz = 0.0;
                    if let Some((p, w)) = below {
                        fz += w * (uc - p[c]);
                    }
                    if let Some((p, w)) = above {
                        fz += w * (uc - p[c]);
                    }
                    o[c] = dzk * (fx + fy) + self.dx[i] * self.dy[j] * fz;
                }
            }
        });
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let (nx, ny, nz) = (self.nx, self.ny, self.nz);
        let mut d = vec![0.0; nx * ny * nz];
        for k in 0..nz {
            let wz = if k > 0 { self.cz[k - 1] } else { 0.0 } + if k + 1 < nz { self.cz[k] } else { 0.0 };
            for j in 0..ny {
                for i in 0..nx {
                    let xy = self.dy[j] * (self.cx[i] + self.cx[i + 1]) + self.dx[i] * (self.cy[j] + self.cy[j + 1]);
                    d[(k * ny + j) * nx + i] = self.dz[k] * xy + self.dx[i] * self.dy[j] * wz;
                }
            }
        }
        d
    }

    fn volume(&self, c: usize, k: usize) -> f64 {
        self.dx[c % self.nx] * self.dy[c / self.nx] * self.dz[k]
    }
}

struct ThinOperator<'a> {
    st: Stencil,
    hole: &'a [bool],
    reduction: Reduction,
    /// Operator diagonal, filled when line preconditioning is enabled.
    diag: Vec<f64>,
    lines: Option<LineFactors>,
}

/// Solves a symmetric tridiagonal system in place (`rhs` becomes the solution).
fn thomas(diag: &[f64], off: &[f64], rhs: &mut [f64], c: &mut Vec<f64>) {
    let n = diag.len();
    c.clear();
    c.resize(n, 0.0);
    let mut beta = diag[0];
    rhs[0] /= beta;
    for i in 1..n {
        c[i] = off[i - 1] / beta;
        beta = diag[i] - off[i - 1] * c[i];
        rhs[i] = (rhs[i] - off[i - 1] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i + 1] * rhs[i + 1];
    }
}

impl<'a> ThinOperator<'a> {
    fn new(g: &'a ThinGrid, reduction: Reduction, lines: bool) -> Self {
        let mut op = Self { st: Stencil::new(g), hole: &g.hole, reduction, diag: Vec::new(), lines: None };
        if lines {
            op.diag = op.diagonal();
            op.factor_lines();
        }
        op
    }

    fn slab(&self) -> usize {
        self.st.plane() * self.st.nz
    }

    /// Row `k = 0` of a hole column that only carries an identity equation.
    fn is_identity(&self, slab: usize, k: usize, c: usize) -> bool {
        k == 0
            && self.hole[c]
            && match self.reduction {
                Reduction::Full => slab == 1,
                Reduction::Odd => slab == 0,
            }
    }

    fn slabs(&self) -> usize {
        match self.reduction {
            Reduction::Full => 2,
            Reduction::Odd => 1,
        }
    }

    /// Off-diagonal coupling between `p` and its successor along `dir`
    /// (0 = x, 1 = y, 2 = z), zero across identity rows.
    fn coupling(&self, slab: usize, k: usize, cell: usize, dir: usize) -> f64 {
        let st = &self.st;
        let (nx, np) = (st.nx, st.plane());
        let (i, j) = (cell % nx, cell / nx);
        match dir {
            0 => {
                if self.is_identity(slab, k, cell) || self.is_identity(slab, k, cell + 1) {
                    0.0
                } else {
                    -st.dz[k] * st.dy[j] * st.cx[i + 1]
                }
            }
            1 => {
                if self.is_identity(slab, k, cell) || self.is_identity(slab, k, cell + nx) {
                    0.0
                } else {
                    -st.dz[k] * st.dx[i] * st.cy[j + 1]
                }
            }
            _ => {
                let _ = np;
                if self.is_identity(slab, k, cell) {
                    0.0
                } else {
                    -st.dx[i] * st.dy[j] * st.cz[k]
                }
            }
        }
    }

    /// LU factors of every line: for each unknown, `1 / pivot`, the scaled
    /// sub-diagonal `off / pivot`, and the back-substitution factor.
    fn factor_lines(&mut self) {
        let st = &self.st;
        let (nx, ny, nz) = (st.nx, st.ny, st.nz);
        let np = st.plane();
        let n = self.slab();
        let total = self.slabs() * n;
        let mut f = LineFactors {
            ib: std::array::from_fn(|_| vec![0.0; total]),
            g: std::array::from_fn(|_| vec![0.0; total]),
            c: std::array::from_fn(|_| vec![0.0; total]),
        };
        for slab in 0..self.slabs() {
            for k in 0..nz {
                for j in 0..ny {
                    for i in 0..nx {
                        let cell = j * nx + i;
                        let p = slab * n + k * np + cell;
                        let d = self.diag[p];
                        // predecessor along each direction
                        let prev = [
                            (i > 0).then(|| (p - 1, self.coupling(slab, k, cell - 1, 0))),
                            (j > 0).then(|| (p - nx, self.coupling(slab, k, cell - nx, 1))),
                            (k > 0).then(|| (p - np, self.coupling(slab, k - 1, cell, 2))),
                        ];
                        for (dir, pr) in prev.iter().enumerate() {
                            let beta = match pr {
                                Some((q, off)) => {
                                    let c = off * f.ib[dir][*q];
                                    f.c[dir][p] = c;
                                    d - off * c
                                }
                                None => d,
                            };
                            f.ib[dir][p] = 1.0 / beta;
                            f.g[dir][p] = pr.map_or(0.0, |(_, off)| off) / beta;
                        }
                    }
                }
            }
        }
        self.lines = Some(f);
    }

    /// Additive sum of exact tridiagonal solves along x, y and z lines.
    /// Lines of one direction are swept together so memory access stays
    /// contiguous.
    fn line_solve(&self, r: &[f64], z: &mut [f64]) {
        let f = self.lines.as_ref().expect("line factors");
        let st = &self.st;
        let (nx, ny, nz) = (st.nx, st.ny, st.nz);
        let np = st.plane();
        let n = self.slab();
        let planes: Vec<usize> = (0..self.slabs() * nz).collect();
        // x and y lines, plane by plane
        z.par_chunks_mut(np).zip(planes.par_iter()).for_each(|(zp, &pl)| {
            let base = pl * np;
            let mut val = vec![0.0; np];
            for j in 0..ny {
                let row = j * nx;
                let p0 = base + row;
                zp[row] = r[p0] * f.ib[0][p0];
                for i in 1..nx {
                    let p = p0 + i;
                    zp[row + i] = r[p] * f.ib[0][p] - f.g[0][p] * zp[row + i - 1];
                }
                for i in (0..nx - 1).rev() {
                    zp[row + i] -= f.c[0][p0 + i + 1] * zp[row + i + 1];
                }
            }
            for cc in 0..nx {
                val[cc] = r[base + cc] * f.ib[1][base + cc];
            }
            for cc in nx..np {
                let p = base + cc;
                val[cc] = r[p] * f.ib[1][p] - f.g[1][p] * val[cc - nx];
            }
            for cc in (0..np - nx).rev() {
                val[cc] -= f.c[1][base + cc + nx] * val[cc + nx];
            }
            for (o, v) in zp.iter_mut().zip(&val) {
                *o += v;
            }
        });
        // z lines, all columns of a slab at once
        let mut val = vec![0.0; n];
        for slab in 0..self.slabs() {
            let base = slab * n;
            for cell in 0..np {
                val[cell] = r[base + cell] * f.ib[2][base + cell];
            }
            for q in np..n {
                let p = base + q;
                val[q] = r[p] * f.ib[2][p] - f.g[2][p] * val[q - np];
            }
            for q in (0..n - np).rev() {
                val[q] -= f.c[2][base + q + np] * val[q + np];
            }
            for (o, v) in z[base..base + n].iter_mut().zip(&val) {
                *o += v;
            }
        }
        if self.reduction == Reduction::Full {
            // hole columns: replace the two separate slab lines by one line
            // through the shared node
            let (mut d, mut o, mut b, mut c, mut at) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for cell in (0..np).filter(|&c| self.hole[c]) {
                for slab in 0..2 {
                    let base = slab * n;
                    d.clear();
                    o.clear();
                    b.clear();
                    for k in 0..nz {
                        d.push(self.diag[base + k * np + cell]);
                        b.push(r[base + k * np + cell]);
                        if k + 1 < nz {
                            o.push(self.coupling(slab, k, cell, 2));
                        }
                    }
                    thomas(&d, &o, &mut b, &mut c);
                    for k in 0..nz {
                        z[base + k * np + cell] -= b[k];
                    }
                }
                let area = st.dx[cell % nx] * st.dy[cell / nx];
                d.clear();
                o.clear();
                b.clear();
                at.clear();
                for k in (1..nz).rev() {
                    at.push(n + k * np + cell);
                    o.push(-area * st.cz[k - 1]);
                }
                for k in 0..nz {
                    at.push(k * np + cell);
                    if k + 1 < nz {
                        o.push(-area * st.cz[k]);
                    }
                }
                for &p in &at {
                    d.push(self.diag[p]);
                    b.push(r[p]);
                }
                thomas(&d, &o, &mut b, &mut c);
                for (q, &p) in at.iter().enumerate() {
                    z[p] += b[q];
                }
                z[n + cell] += r[n + cell] / self.diag[n + cell];
            }
        }
    }
}

/// Per-unknown factors of the x, y and z line systems.
struct LineFactors {
    ib: [Vec<f64>; 3],
    g: [Vec<f64>; 3],
    c: [Vec<f64>; 3],
}

impl LinearOperator<f64> for ThinOperator<'_> {
    fn dim(&self) -> usize {
        match self.reduction {
            Reduction::Full => 2 * self.slab(),
            Reduction::Odd => self.slab(),
        }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let np = self.st.plane();
        let n = self.slab();
        match self.reduction {
            Reduction::Full => {
                let (xu, xl) = x.split_at(n);
                let (yu, yl) = y.split_at_mut(n);
                let l0: Vec<f64> = (0..np).map(|c| if self.hole[c] { xu[c] } else { xl[c] }).collect();
                let pu: Vec<&[f64]> = xu.chunks(np).collect();
                let mut pl: Vec<&[f64]> = xl.chunks(np).collect();
                pl[0] = &l0;
                self.st.apply(&pu, yu);
                self.st.apply(&pl, yl);
                for c in 0..np {
                    if self.hole[c] {
                        yu[c] += yl[c];
                        yl[c] = xl[c];
                    }
                }
            }
            Reduction::Odd => {
                let u0: Vec<f64> = (0..np).map(|c| if self.hole[c] { 0.0 } else { x[c] }).collect();
                let mut pu: Vec<&[f64]> = x.chunks(np).collect();
                pu[0] = &u0;
                self.st.apply(&pu, y);
                for c in 0..np {
                    if self.hole[c] {
                        y[c] = x[c];
                    }
                }
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let np = self.st.plane();
        let d = self.st.diagonal();
        match self.reduction {
            Reduction::Full => {
                let mut out = d.clone();
                let mut lower = d;
                for c in 0..np {
                    if self.hole[c] {
                        out[c] += lower[c];
                        lower[c] = 1.0;
                    }
                }
                out.extend(lower);
                out
            }
            Reduction::Odd => {
                let mut out = d;
                for c in 0..np {
                    if self.hole[c] {
                        out[c] = 1.0;
                    }
                }
                out
            }
        }
    }

    fn precondition(&self, r: &[f64], z: &mut [f64]) -> bool {
        if self.lines.is_none() {
            return false;
        }
        self.line_solve(r, z);
        true
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn nodal(g: &ThinGrid, f: &(dyn Fn(f64, f64, f64) -> f64 + Send + Sync), sign: f64, st: &Stencil) -> Vec<f64> {
    let np = g.plane();
    let mut b = vec![0.0; g.slab_len()];
    b.par_chunks_mut(np).enumerate().for_each(|(k, plane)| {
        let z = sign * g.z.node(k);
        for (c, v) in plane.iter_mut().enumerate() {
            *v = f(g.x.node(c % g.nx()), g.y.node(c / g.nx()), z) * st.volume(c, k);
        }
    });
    b
}

/// Solves `-Δu = f` in the two slabs joined through the holes, with `u = 0`
/// on the lateral boundary and natural conditions on the plates.
/// Solver controls for [`solve_direct`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DirectOptions {
    pub cg: CgOptions,
    /// Line preconditioner instead of Jacobi.
    pub lines: bool,
}

impl Default for DirectOptions {
    fn default() -> Self {
        Self { cg: CgOptions::with_tol(1e-10), lines: true }
    }
}

pub fn solve_direct(g: &ThinGrid, src: &ThinSource, reduction: Reduction, opts: &DirectOptions) -> Result<DirectSolution> {
    if g.nz() < 2 {
        return Err(invalid("grid", "need at least two vertical nodes"));
    }
    let st = Stencil::new(g);
    let np = g.plane();
    let n = g.slab_len();
    let mut b = nodal(g, &*src.plus, 1.0, &st);
    let bl = match reduction {
        Reduction::Full => {
            let mut bl = nodal(g, &*src.minus, -1.0, &st);
            for c in 0..np {
                if g.hole[c] {
                    b[c] += bl[c];
                    bl[c] = 0.0;
                }
            }
            bl
        }
        Reduction::Odd => {
            for c in 0..np {
                if g.hole[c] {
                    b[c] = 0.0;
                }
            }
            Vec::new()
        }
    };
    b.extend_from_slice(&bl);
    drop(st);
    let op = ThinOperator::new(g, reduction, opts.lines);
    let mut x = vec![0.0; b.len()];
    let report = pcg(&op, &b, &mut x, &opts.cg)?;
    let mut ax = vec![0.0; x.len()];
    op.apply(&x, &mut ax);
    let energy_half = dot(&x, &ax);
    let load_half = dot(&x, &b);
    let (upper, lower, energy, load) = match reduction {
        Reduction::Full => {
            let mut lower = x[n..].to_vec();
            lower[..np].iter_mut().zip(&x[..np]).zip(&g.hole).for_each(|((l, u), h)| {
                if *h {
                    *l = *u;
                }
            });
            (x[..n].to_vec(), lower, energy_half, load_half)
        }
        Reduction::Odd => {
            let lower = x.iter().map(|v| -v).collect();
            (x, lower, 2.0 * energy_half, 2.0 * load_half)
        }
    };
    Ok(DirectSolution {
        field: SieveField { nx: g.nx(), ny: g.ny(), nz: g.nz(), upper, lower },
        energy: energy * g.copies(),
        load: load * g.copies(),
        report,
        reduction,
        unknowns: op.dim(),
    })
}

/// `∫ |∇u|²` over each slab, computed edge by edge from a field.
pub fn slab_energies(g: &ThinGrid, f: &SieveField) -> (f64, f64) {
    let st = Stencil::new(g);
    let np = g.plane();
    let mut out = vec![0.0; g.slab_len()];
    let pu: Vec<&[f64]> = f.upper.chunks(np).collect();
    st.apply(&pu, &mut out);
    let eu = dot(&f.upper, &out);
    let pl: Vec<&[f64]> = f.lower.chunks(np).collect();
    st.apply(&pl, &mut out);
    let el = dot(&f.lower, &out);
    (eu * g.copies(), el * g.copies())
}

/// Discrete `||f||²` on each slab with nodal quadrature.
pub fn source_norms(g: &ThinGrid, src: &ThinSource) -> (f64, f64) {
    let st = Stencil::new(g);
    let sq = |f: &(dyn Fn(f64, f64, f64) -> f64 + Send + Sync), sign: f64| {
        let mut acc = 0.0;
        for k in 0..g.nz() {
            let z = sign * g.z.node(k);
            for c in 0..g.plane() {
                let v = f(g.x.node(c % g.nx()), g.y.node(c / g.nx()), z);
                acc += v * v * st.volume(c, k);
            }
        }
        acc
    };
    (sq(&*src.plus, 1.0) * g.copies(), sq(&*src.minus, -1.0) * g.copies())
}

/// Applies the two-slab operator; used to check symmetry.
pub fn apply_operator(g: &ThinGrid, reduction: Reduction, x: &[f64]) -> Vec<f64> {
    let op = ThinOperator::new(g, reduction, false);
    let mut y = vec![0.0; x.len()];
    op.apply(x, &mut y);
    y
}

