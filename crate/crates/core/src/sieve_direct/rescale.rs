use serde::{Deserialize, Serialize};

use super::solver::{inv_gaps, slab_energies, source_norms, ThinSource};
use crate::grid::Axis;
use super::thin_grid::{SieveField, ThinGrid};

/// A solution mapped to the fixed domain `U' x (-1, 1)` through
/// `x̂_N = x_N / delta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaledField {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Node heights in `[0, 1]`; the lower slab uses `-zhat`.
    pub zhat: Vec<f64>,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    /// `(1/delta) ∫ |∇u|²`, which equals `∫ |∇' û|² + delta^-2 |∂_N û|²`.
    pub energy: f64,
}

pub fn rescale(g: &ThinGrid, f: &SieveField) -> RescaledField {
    let (eu, el) = slab_energies(g, f);
    RescaledField {
        x: g.x.nodes(),
        y: g.y.nodes(),
        zhat: g.z.nodes().iter().map(|z| z / g.delta).collect(),
        upper: f.upper.clone(),
        lower: f.lower.clone(),
        energy: (eu + el) / g.delta,
    }
}

/// Vertical averages `(1/delta) ∫ u dz` of each slab, per column.
pub fn slab_averages(g: &ThinGrid, f: &SieveField) -> (Vec<f64>, Vec<f64>) {
    let np = g.plane();
    let mut plus = vec![0.0; np];
    let mut minus = vec![0.0; np];
    for k in 0..g.nz() {
        let w = g.z.dual(k) / g.delta;
        for c in 0..np {
            plus[c] += w * f.upper[k * np + c];
            minus[c] += w * f.lower[k * np + c];
        }
    }
    (plus, minus)
}

/// `ū+ - ū-` per column.
pub fn jump_profile(g: &ThinGrid, f: &SieveField) -> Vec<f64> {
    let (p, m) = slab_averages(g, f);
    p.iter().zip(&m).map(|(a, b)| a - b).collect()
}

/// `(||jump - reference||, ||reference||)` in `L²(U')` with cell-area weights.
/// On a mirrored grid the reference is assumed to share the symmetry.
pub fn compare_profile(g: &ThinGrid, values: &[f64], reference: impl Fn(f64, f64) -> f64) -> (f64, f64) {
    let (mut diff, mut norm) = (0.0, 0.0);
    for j in 0..g.ny() {
        for i in 0..g.nx() {
            let a = g.x.dual(i) * g.y.dual(j);
            let r = reference(g.x.node(i), g.y.node(j));
            let v = values[j * g.nx() + i];
            diff += a * (v - r).powi(2);
            norm += a * r * r;
        }
    }
    ((diff * g.copies()).sqrt(), (norm * g.copies()).sqrt())
}

/// Bound `(||f̂+||² + ||f̂-||²) / λ` on the rescaled energy, from the
/// Poincaré inequality in `U'`. `λ` is the first eigenvalue of the discrete
/// in-plane operator, which sits just below the continuous `2 π²`.
pub fn a_priori_bound(g: &ThinGrid, src: &ThinSource) -> f64 {
    let (p, m) = source_norms(g, src);
    let lambda = axis_eigenvalue(&g.x, g.mirror[0]) + axis_eigenvalue(&g.y, g.mirror[1]);
    (p + m) / g.delta / lambda
}

/// Smallest `λ` with `K v = λ M v` for the one-dimensional stencil of an
/// in-plane axis, by inverse iteration on `M^{-1/2} K M^{-1/2}`.
pub(crate) fn axis_eigenvalue(a: &Axis<f64>, mirror: bool) -> f64 {
    let c = inv_gaps(a, mirror);
    let n = a.len();
    let s: Vec<f64> = (0..n).map(|i| a.dual(i).sqrt().recip()).collect();
    let diag: Vec<f64> = (0..n).map(|i| (c[i] + c[i + 1]) * s[i] * s[i]).collect();
    let off: Vec<f64> = (0..n.saturating_sub(1)).map(|i| -c[i + 1] * s[i] * s[i + 1]).collect();
    let mut v = vec![1.0; n];
    let mut lambda = f64::INFINITY;
    for _ in 0..200 {
        let w = solve_tridiagonal(&diag, &off, &v);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let next = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / (norm * norm);
        v = w.iter().map(|x| x / norm).collect();
        if (next - lambda).abs() <= 1e-14 * next {
            return next;
        }
        lambda = next;
    }
    // Rayleigh quotients from above: rounding only loosens the bound
    lambda
}

fn solve_tridiagonal(diag: &[f64], off: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        let lower = if i > 0 { off[i - 1] } else { 0.0 };
        let m = diag[i] - lower * if i > 0 { c[i - 1] } else { 0.0 };
        if i + 1 < n {
            c[i] = off[i] / m;
        }
        d[i] = (rhs[i] - lower * if i > 0 { d[i - 1] } else { 0.0 }) / m;
    }
    for i in (0..n.saturating_sub(1)).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    d
}
