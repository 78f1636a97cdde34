//! The coupled limit problem on `U' = (0, 1)^d`:
//! `-Δu± ± γ/2 (u+ - u-) = f±`, `u± = 0` on `∂U'`,
//! discretized with the standard `(2d + 1)`-point stencil.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{pcg, CgOptions, CgReport, LinearOperator};

/// Uniform node grid on the unit cube with `n` cells per side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridU {
    pub dim: usize,
    pub n: usize,
}

impl GridU {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(invalid("dim", "must be 2 or 3"));
        }
        if n < 2 {
            return Err(invalid("n", "need at least two cells per side"));
        }
        Ok(Self { dim, n })
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Nodes per side, boundary included.
    pub fn side(&self) -> usize {
        self.n + 1
    }

    pub fn num_nodes(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    pub fn num_interior(&self) -> usize {
        (self.n - 1).pow(self.dim as u32)
    }

    pub fn multi_index(&self, mut k: usize) -> [usize; 3] {
        let m = self.side();
        let mut out = [0; 3];
        for slot in out.iter_mut().take(self.dim) {
            *slot = k % m;
            k /= m;
        }
        out
    }

    pub fn coords(&self, k: usize) -> Vec<f64> {
        let h = self.spacing();
        self.multi_index(k)[..self.dim].iter().map(|&i| i as f64 * h).collect()
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        self.multi_index(k)[..self.dim].iter().any(|&i| i == 0 || i == self.n)
    }

    fn interior_to_node(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&k| !self.is_boundary(k)).collect()
    }

    /// Multilinear interpolation of a nodal field.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let m = self.side();
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..self.dim {
            let t = (x[a].clamp(0.0, 1.0) * self.n as f64).min(self.n as f64 - 1e-12);
            base[a] = t.floor() as usize;
            frac[a] = t - base[a] as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << self.dim) {
            let mut idx = 0usize;
            let mut stride = 1usize;
            let mut w = 1.0;
            for a in 0..self.dim {
                let bit = (corner >> a) & 1;
                idx += (base[a] + bit) * stride;
                stride *= m;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            acc += w * values[idx];
        }
        acc
    }
}

/// Nodal values of `f+` and `f-`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourcePair {
    pub f_plus: Vec<f64>,
    pub f_minus: Vec<f64>,
}

impl SourcePair {
    pub fn from_fns(grid: &GridU, fp: impl Fn(&[f64]) -> f64, fm: impl Fn(&[f64]) -> f64) -> Self {
        let (mut f_plus, mut f_minus) = (Vec::new(), Vec::new());
        for k in 0..grid.num_nodes() {
            let x = grid.coords(k);
            f_plus.push(fp(&x));
            f_minus.push(fm(&x));
        }
        Self { f_plus, f_minus }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledSolution {
    pub grid: GridU,
    pub gamma: f64,
    pub u_plus: Vec<f64>,
    pub u_minus: Vec<f64>,
    pub report: CgReport,
}

impl CoupledSolution {
    pub fn jump(&self) -> Vec<f64> {
        self.u_plus.iter().zip(&self.u_minus).map(|(a, b)| a - b).collect()
    }
}

struct CoupledOperator<'a> {
    grid: &'a GridU,
    nodes: Vec<usize>,
    slot: Vec<Option<usize>>,
    gamma: f64,
}

impl CoupledOperator<'_> {
    fn laplacian(&self, x: &[f64], k: usize) -> f64 {
        let m = self.grid.side();
        let inv_h2 = (self.grid.n * self.grid.n) as f64;
        let node = self.nodes[k];
        let mut acc = 2.0 * self.grid.dim as f64 * x[k];
        let mut stride = 1;
        for _ in 0..self.grid.dim {
            for nb in [node - stride, node + stride] {
                if let Some(j) = self.slot[nb] {
                    acc -= x[j];
                }
            }
            stride *= m;
        }
        acc * inv_h2
    }
}

impl LinearOperator<f64> for CoupledOperator<'_> {
    fn dim(&self) -> usize {
        2 * self.nodes.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.nodes.len();
        let (xp, xm) = x.split_at(n);
        let (yp, ym) = y.split_at_mut(n);
        let g = 0.5 * self.gamma;
        for k in 0..n {
            let jump = g * (xp[k] - xm[k]);
            yp[k] = self.laplacian(xp, k) + jump;
            ym[k] = self.laplacian(xm, k) - jump;
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let d = 2.0 * self.grid.dim as f64 * (self.grid.n * self.grid.n) as f64 + 0.5 * self.gamma;
        vec![d; self.dim()]
    }
}

/// Solves the coupled system; `u±` are returned on all nodes.
pub fn solve_coupled(gamma: f64, src: &SourcePair, grid: &GridU, opts: &CgOptions) -> Result<CoupledSolution> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(invalid("gamma", "must be finite and nonnegative"));
    }
    let nn = grid.num_nodes();
    if src.f_plus.len() != nn || src.f_minus.len() != nn {
        return Err(invalid("sources", "length differs from the node count"));
    }
    let nodes = grid.interior_to_node();
    let mut slot = vec![None; nn];
    for (k, &node) in nodes.iter().enumerate() {
        slot[node] = Some(k);
    }
    let op = CoupledOperator { grid, nodes, slot, gamma };
    let mut b: Vec<f64> = op.nodes.iter().map(|&k| src.f_plus[k]).collect();
    b.extend(op.nodes.iter().map(|&k| src.f_minus[k]));
    let mut x = vec![0.0; b.len()];
    let report = pcg(&op, &b, &mut x, opts)?;
    let n = op.nodes.len();
    let (mut u_plus, mut u_minus) = (vec![0.0; nn], vec![0.0; nn]);
    for (k, &node) in op.nodes.iter().enumerate() {
        u_plus[node] = x[k];
        u_minus[node] = x[n + k];
    }
    Ok(CoupledSolution { grid: *grid, gamma, u_plus, u_minus, report })
}

/// Discrete energy
/// `Σ ½|∇u±|² - f± u± + γ/4 (u+ - u-)²`, whose minimizer is the discrete
/// solution.
pub fn energy_coupled(u_plus: &[f64], u_minus: &[f64], src: &SourcePair, gamma: f64, grid: &GridU) -> f64 {
    let h = grid.spacing();
    let m = grid.side();
    let vol = h.powi(grid.dim as i32);
    let edge_w = h.powi(grid.dim as i32 - 2);
    let mut grad = 0.0;
    let mut bulk = 0.0;
    for k in 0..grid.num_nodes() {
        let idx = grid.multi_index(k);
        let mut stride = 1;
        for a in 0..grid.dim {
            if idx[a] < grid.n {
                let j = k + stride;
                grad += (u_plus[j] - u_plus[k]).powi(2) + (u_minus[j] - u_minus[k]).powi(2);
            }
            stride *= m;
        }
        if !grid.is_boundary(k) {
            let jump = u_plus[k] - u_minus[k];
            bulk += -src.f_plus[k] * u_plus[k] - src.f_minus[k] * u_minus[k] + 0.25 * gamma * jump * jump;
        }
    }
    0.5 * edge_w * grad + vol * bulk
}

/// Discrete `L²(U')` norm of a nodal field.
pub fn l2_norm(grid: &GridU, v: &[f64]) -> f64 {
    let vol = grid.spacing().powi(grid.dim as i32);
    (vol * v.iter().map(|x| x * x).sum::<f64>()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_coupling_decouples() {
        let g = GridU::new(2, 16).unwrap();
        let src = SourcePair::from_fns(&g, |x| (PI * x[0]).sin() * (PI * x[1]).sin(), |_| 0.0);
        let s = solve_coupled(0.0, &src, &g, &CgOptions::default()).unwrap();
        assert!(s.u_minus.iter().all(|v| v.abs() < 1e-12));
        let peak = s.u_plus.iter().cloned().fold(0.0, f64::max);
        assert!((peak * 2.0 * PI * PI - 1.0).abs() < 0.01);
    }

    #[test]
    fn interpolation_reproduces_bilinear() {
        let g = GridU::new(2, 4).unwrap();
        let v: Vec<f64> = (0..g.num_nodes()).map(|k| {
            let x = g.coords(k);
            1.0 + 2.0 * x[0] - x[1] + 3.0 * x[0] * x[1]
        }).collect();
        let p = [0.31, 0.77];
        let exact = 1.0 + 2.0 * p[0] - p[1] + 3.0 * p[0] * p[1];
        assert!((g.interpolate(&v, &p) - exact).abs() < 1e-12);
    }

    #[test]
    fn disallows_bad_dimension() {
        assert!(GridU::new(4, 8).is_err());
        assert!(GridU::new(2, 1).is_err());
    }
}
