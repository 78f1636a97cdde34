//! Radial Dirichlet problem in the sieve plane `R^d`, `d = N - 1`.
//!
//! For a ball hole the planar cell problem is one-dimensional in the radius
//! with weight `omega_(d-1) s^(d-1)`. Nodes are log-spaced on `[rho, l]`.

use crate::error::{invalid, Result};
use crate::linalg::{pcg, CgOptions, CgReport, TripletBuilder};
use crate::scalar::Real;

use super::axisym::{sphere_area, NodeTag, ScalarField};

#[derive(Clone, Debug, PartialEq)]
pub struct PlanarGrid<T> {
    pub nodes: Vec<T>,
}

impl<T: Real> PlanarGrid<T> {
    /// `n` cells, uniform in `ln s`, from `rho` to `l`.
    pub fn log_spaced(rho: T, l: T, n: usize) -> Result<Self> {
        if !(rho > T::zero() && l > rho) {
            return Err(invalid("l", "need 0 < rho < l"));
        }
        let n = n.max(1);
        let step = (l / rho).ln() / T::from_usize_lossy(n);
        let mut nodes: Vec<T> = (0..=n).map(|i| rho * (step * T::from_usize_lossy(i)).exp()).collect();
        nodes[0] = rho;
        nodes[n] = l;
        Ok(Self { nodes })
    }

    /// Halves every log step.
    pub fn refined(&self) -> Self {
        let mut out = Vec::with_capacity(2 * self.nodes.len() - 1);
        for w in self.nodes.windows(2) {
            out.push(w[0]);
            out.push((w[0] * w[1]).sqrt());
        }
        out.push(*self.nodes.last().unwrap());
        Self { nodes: out }
    }

    /// Largest step in `ln s`.
    pub fn log_step(&self) -> T {
        self.nodes.windows(2).map(|w| (w[1] / w[0]).ln()).fold(T::zero(), T::max)
    }
}

#[derive(Clone, Debug)]
pub struct PlanarSolution<T> {
    pub d: usize,
    pub grid: PlanarGrid<T>,
    pub field: ScalarField<T>,
    pub energy: T,
    pub report: CgReport,
}

/// Solves the planar problem with zero on `B'(0, rho)` and one on
/// `∂B'(0, l)`; the energy estimates `Cap_0(B'(0, rho), B'(0, l))`.
pub fn solve_planar<T: Real>(d: usize, grid: &PlanarGrid<T>, opts: &CgOptions) -> Result<PlanarSolution<T>> {
    if d < 2 {
        return Err(invalid("d", "planar dimension must be at least 2"));
    }
    let s = &grid.nodes;
    let n = s.len();
    if n < 3 {
        return Err(crate::error::SieveError::Singular("planar grid has no interior node".into()));
    }
    let omega = sphere_area::<T>(d - 1);
    let wexp = T::from_usize_lossy(d - 1);
    let weight = |i: usize| {
        let mid = (s[i] + s[i + 1]) * T::lit(0.5);
        omega * mid.powf(wexp) / (s[i + 1] - s[i])
    };
    let m = n - 2;
    let mut tb = TripletBuilder::with_capacity(m, 4 * n);
    let mut rhs = vec![T::zero(); m];
    for i in 0..n - 1 {
        let w = weight(i);
        let lo = (i >= 1).then(|| i - 1);
        let hi = (i + 1 <= n - 2).then_some(i);
        match (lo, hi) {
            (Some(a), Some(b)) => tb.add_edge(a, b, w),
            (None, Some(b)) => tb.add(b, b, w),
            (Some(a), None) => {
                tb.add(a, a, w);
                rhs[a] = rhs[a] + w;
            }
            (None, None) => {}
        }
    }
    let a = tb.build();
    let mut x = vec![T::zero(); m];
    let report = pcg(&a, &rhs, &mut x, opts)?;
    let mut values = vec![T::zero(); n];
    values[n - 1] = T::one();
    values[1..n - 1].copy_from_slice(&x);
    let mut tags = vec![NodeTag::Interior; n];
    tags[0] = NodeTag::Dirichlet0;
    tags[n - 1] = NodeTag::Dirichlet1;
    let energy = (0..n - 1)
        .map(|i| {
            let du = values[i + 1] - values[i];
            weight(i) * du * du
        })
        .sum();
    Ok(PlanarSolution {
        d,
        grid: grid.clone(),
        field: ScalarField { shape: vec![n], values, tags },
        energy,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_grid_endpoints() {
        let g = PlanarGrid::log_spaced(0.5f64, 8.0, 4).unwrap();
        for (a, b) in g.nodes.iter().zip([0.5, 1.0, 2.0, 4.0, 8.0]) {
            assert!((a - b).abs() <= 1e-14 * b);
        }
        let r = g.refined();
        assert_eq!(r.nodes.len(), 9);
        assert!((r.nodes[1] - 0.5f64 * 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn annulus_close_to_exact() {
        let g = PlanarGrid::log_spaced(1.0f64, 4.0, 64).unwrap();
        let sol = solve_planar(2, &g, &CgOptions::default()).unwrap();
        let exact = 2.0 * std::f64::consts::PI / 4f64.ln();
        assert!((sol.energy - exact).abs() / exact < 1e-3);
        assert!(sol.field.values.windows(2).all(|w| w[1] >= w[0]));
    }
}
