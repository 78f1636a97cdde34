//! One-dimensional axes used to build tensor-product grids.
//!
//! An axis is either vertex-centred (nodes include both end points) or
//! cell-centred (nodes at cell midpoints, the end points are faces).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Axis<T> {
    Vertex { nodes: Vec<T> },
    Cells { faces: Vec<T> },
}

fn check_increasing<T: Real>(v: &[T], name: &'static str) -> Result<()> {
    if v.len() < 2 {
        return Err(invalid(name, "need at least two coordinates"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid(name, "non-finite coordinate"));
    }
    if v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid(name, "coordinates must be strictly increasing"));
    }
    Ok(())
}

impl<T: Real> Axis<T> {
    pub fn vertex(nodes: Vec<T>) -> Result<Self> {
        check_increasing(&nodes, "nodes")?;
        Ok(Axis::Vertex { nodes })
    }

    pub fn cells(faces: Vec<T>) -> Result<Self> {
        check_increasing(&faces, "faces")?;
        Ok(Axis::Cells { faces })
    }

    pub fn vertex_uniform(lo: T, hi: T, n_cells: usize) -> Self {
        Axis::Vertex { nodes: uniform_points(lo, hi, n_cells) }
    }

    pub fn cells_uniform(lo: T, hi: T, n_cells: usize) -> Self {
        Axis::Cells { faces: uniform_points(lo, hi, n_cells) }
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        match self {
            Axis::Vertex { nodes } => nodes.len(),
            Axis::Cells { faces } => faces.len() - 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_vertex(&self) -> bool {
        matches!(self, Axis::Vertex { .. })
    }

    #[inline]
    pub fn node(&self, i: usize) -> T {
        match self {
            Axis::Vertex { nodes } => nodes[i],
            Axis::Cells { faces } => (faces[i] + faces[i + 1]) * T::lit(0.5),
        }
    }

    pub fn nodes(&self) -> Vec<T> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    pub fn lo(&self) -> T {
        match self {
            Axis::Vertex { nodes } => nodes[0],
            Axis::Cells { faces } => faces[0],
        }
    }

    pub fn hi(&self) -> T {
        match self {
            Axis::Vertex { nodes } => *nodes.last().unwrap(),
            Axis::Cells { faces } => *faces.last().unwrap(),
        }
    }

    /// Lower and upper end of the control volume of node `i`.
    #[inline]
    pub fn dual_bounds(&self, i: usize) -> (T, T) {
        match self {
            Axis::Vertex { nodes } => {
                let half = T::lit(0.5);
                let a = if i == 0 { nodes[0] } else { (nodes[i - 1] + nodes[i]) * half };
                let n = nodes.len();
                let b = if i + 1 == n { nodes[n - 1] } else { (nodes[i] + nodes[i + 1]) * half };
                (a, b)
            }
            Axis::Cells { faces } => (faces[i], faces[i + 1]),
        }
    }

    /// Width of the control volume of node `i`.
    #[inline]
    pub fn dual(&self, i: usize) -> T {
        let (a, b) = self.dual_bounds(i);
        b - a
    }

    /// Distance between node `i` and node `i + 1`.
    #[inline]
    pub fn gap(&self, i: usize) -> T {
        self.node(i + 1) - self.node(i)
    }

    /// Index of the node equal to `x` (vertex axes), if any.
    pub fn find_node(&self, x: T) -> Option<usize> {
        let tol = T::lit(1e-12) * (self.hi() - self.lo());
        (0..self.len()).find(|&i| (self.node(i) - x).abs() <= tol)
    }

    /// Index `i` with `node(i) <= x < node(i + 1)`, clamped to the valid range.
    pub fn bracket(&self, x: T) -> usize {
        let n = self.len();
        if n < 2 || x <= self.node(0) {
            return 0;
        }
        let (mut lo, mut hi) = (0usize, n - 1);
        if x >= self.node(hi) {
            return n - 2;
        }
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.node(mid) <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Splits every cell in two.
    pub fn refined(&self) -> Self {
        let split = |v: &[T]| {
            let mut out = Vec::with_capacity(2 * v.len() - 1);
            for w in v.windows(2) {
                out.push(w[0]);
                out.push((w[0] + w[1]) * T::lit(0.5));
            }
            out.push(*v.last().unwrap());
            out
        };
        match self {
            Axis::Vertex { nodes } => Axis::Vertex { nodes: split(nodes) },
            Axis::Cells { faces } => Axis::Cells { faces: split(faces) },
        }
    }

    /// Multiplies every coordinate by `f > 0`.
    pub fn scaled(&self, f: T) -> Self {
        match self {
            Axis::Vertex { nodes } => Axis::Vertex { nodes: nodes.iter().map(|x| *x * f).collect() },
            Axis::Cells { faces } => Axis::Cells { faces: faces.iter().map(|x| *x * f).collect() },
        }
    }

    /// Largest node spacing (vertex) or cell width (cells).
    pub fn max_spacing(&self) -> T {
        let v = match self {
            Axis::Vertex { nodes } => nodes,
            Axis::Cells { faces } => faces,
        };
        v.windows(2).map(|w| w[1] - w[0]).fold(T::zero(), T::max)
    }

    pub fn min_spacing(&self) -> T {
        let v = match self {
            Axis::Vertex { nodes } => nodes,
            Axis::Cells { faces } => faces,
        };
        v.windows(2).map(|w| w[1] - w[0]).fold(T::infinity(), T::min)
    }

    /// Cells of width `h_fine` on `[0, fine_end]`, geometrically growing
    /// cells (ratio `q`, capped at `hmax`) up to `hi`.
    pub fn cells_graded(fine_end: T, h_fine: T, hi: T, q: T, hmax: T) -> Result<Self> {
        let mut faces = vec![T::zero()];
        let n_fine = (fine_end / h_fine).round().to_usize().unwrap_or(0).max(1);
        let fine_end = h_fine * T::from_usize_lossy(n_fine);
        if fine_end > hi {
            return Err(invalid("hi", "fine region exceeds the axis length"));
        }
        for i in 1..=n_fine {
            faces.push(h_fine * T::from_usize_lossy(i));
        }
        push_spacings(&mut faces, &fill_gap(hi - fine_end, h_fine * q, hmax, q, hmax));
        Axis::cells(faces)
    }

    /// Vertex axis on `[-h, h]` symmetric about 0 (which is a node), uniform of
    /// spacing `h_fine` for `|z| <= fine_end` and graded outside.
    pub fn vertex_graded_symmetric(fine_end: T, h_fine: T, h: T, q: T, hmax: T) -> Result<Self> {
        let half = vertex_graded_half(fine_end, h_fine, h, q, hmax)?;
        let mut nodes: Vec<T> = half.iter().rev().map(|x| -*x).collect();
        nodes.extend_from_slice(&half[1..]);
        Axis::vertex(nodes)
    }

    /// Vertex axis on `[0, h]`, uniform near 0 then graded.
    pub fn vertex_graded(fine_end: T, h_fine: T, h: T, q: T, hmax: T) -> Result<Self> {
        Axis::vertex(vertex_graded_half(fine_end, h_fine, h, q, hmax)?)
    }
}

fn vertex_graded_half<T: Real>(fine_end: T, h_fine: T, h: T, q: T, hmax: T) -> Result<Vec<T>> {
    let fine_end = fine_end.min(h);
    let n_fine = (fine_end / h_fine).round().to_usize().unwrap_or(0);
    let fine_end = h_fine * T::from_usize_lossy(n_fine);
    if fine_end > h * (T::one() + T::lit(1e-12)) {
        return Err(invalid("h", "fine region exceeds the axis length"));
    }
    let mut nodes = vec![T::zero()];
    for i in 1..=n_fine {
        nodes.push(h_fine * T::from_usize_lossy(i));
    }
    let rest = h - fine_end;
    if rest > h * T::lit(1e-12) {
        push_spacings(&mut nodes, &fill_gap(rest, h_fine * q, hmax, q, hmax));
    }
    let last = nodes.len() - 1;
    nodes[last] = h;
    Ok(nodes)
}

pub(crate) fn uniform_points<T: Real>(lo: T, hi: T, n_cells: usize) -> Vec<T> {
    let n = n_cells.max(1);
    let h = (hi - lo) / T::from_usize_lossy(n);
    let mut v: Vec<T> = (0..=n).map(|i| lo + h * T::from_usize_lossy(i)).collect();
    v[n] = hi;
    v
}

pub(crate) fn push_spacings<T: Real>(points: &mut Vec<T>, spacings: &[T]) {
    let mut x = *points.last().unwrap();
    for s in spacings {
        x = x + *s;
        points.push(x);
    }
}

/// Spacings covering a gap of length `len`, growing geometrically with ratio
/// `q` (capped at `hmax`) from the left start size `h_left` and the right
/// start size `h_right`, rescaled to fit exactly.
pub fn fill_gap<T: Real>(len: T, h_left: T, h_right: T, q: T, hmax: T) -> Vec<T> {
    if len <= T::zero() {
        return Vec::new();
    }
    let (mut left, mut right) = (Vec::new(), Vec::new());
    let (mut hl, mut hr) = (h_left.min(hmax), h_right.min(hmax));
    let mut sum = T::zero();
    let mut last_left = true;
    while sum < len {
        if hl <= hr {
            left.push(hl);
            sum = sum + hl;
            hl = (hl * q).min(hmax);
            last_left = true;
        } else {
            right.push(hr);
            sum = sum + hr;
            hr = (hr * q).min(hmax);
            last_left = false;
        }
    }
    // Either shrink everything to fit, or drop the last piece and stretch.
    let keep = len / sum;
    let last = if last_left { *left.last().unwrap() } else { *right.last().unwrap() };
    if left.len() + right.len() > 1 {
        let stretch = len / (sum - last);
        if stretch.ln().abs() < keep.ln().abs() {
            if last_left {
                left.pop();
            } else {
                right.pop();
            }
            return left
                .into_iter()
                .chain(right.into_iter().rev())
                .map(|s| s * stretch)
                .collect();
        }
    }
    left.into_iter().chain(right.into_iter().rev()).map(|s| s * keep).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn vertex_dual_widths_sum_to_length() {
        let a = Axis::vertex(vec![0.0, 0.1, 0.3, 0.7, 1.0]).unwrap();
        let s: f64 = (0..a.len()).map(|i| a.dual(i)).sum();
        assert_relative_eq!(s, 1.0, epsilon = 1e-15);
        assert_relative_eq!(a.dual(0), 0.05);
        assert_relative_eq!(a.dual(2), 0.3);
    }

    #[test]
    fn cell_axis_nodes_are_midpoints() {
        let a = Axis::cells(vec![0.0, 1.0, 3.0]).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a.node(1), 2.0);
        assert_eq!(a.dual(1), 2.0);
        assert_eq!(a.dual_bounds(0), (0.0, 1.0));
    }

    #[test]
    fn refinement_halves_spacings() {
        let a = Axis::<f64>::cells_uniform(0.0, 1.0, 4);
        let r = a.refined();
        assert_eq!(r.len(), 8);
        assert_relative_eq!(r.max_spacing(), 0.125);
    }

    #[test]
    fn fill_gap_fits_exactly() {
        for &len in &[0.3, 1.0, 7.3, 100.0] {
            let s = fill_gap(len, 0.01, 0.02, 1.5, 5.0);
            let total: f64 = s.iter().sum();
            assert_relative_eq!(total, len, max_relative = 1e-12);
            assert!(s.iter().all(|x| *x > 0.0 && *x <= 5.0 * 1.5));
        }
        assert!(fill_gap(0.0, 0.1, 0.1, 2.0, 1.0).is_empty());
    }

    #[test]
    fn graded_symmetric_axis() {
        let a = Axis::vertex_graded_symmetric(0.5, 0.1, 4.0, 1.3, 1.0).unwrap();
        assert_eq!(a.lo(), -4.0);
        assert_eq!(a.hi(), 4.0);
        let z0 = a.find_node(0.0).unwrap();
        for k in 1..a.len() - z0 {
            assert_relative_eq!(a.node(z0 + k), -a.node(z0 - k), epsilon = 1e-14);
        }
        assert_relative_eq!(a.gap(z0), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn graded_cells_start_fine() {
        let a = Axis::cells_graded(1.0, 0.125, 10.0, 1.2, 2.0).unwrap();
        assert_eq!(a.lo(), 0.0);
        assert_relative_eq!(a.hi(), 10.0, epsilon = 1e-12);
        assert_relative_eq!(a.dual(0), 0.125);
        assert_relative_eq!(a.dual(7), 0.125);
    }

    #[test]
    fn bracket_finds_interval() {
        let a = Axis::vertex(vec![0.0, 1.0, 2.0, 4.0]).unwrap();
        assert_eq!(a.bracket(-1.0), 0);
        assert_eq!(a.bracket(1.5), 1);
        assert_eq!(a.bracket(3.0), 2);
        assert_eq!(a.bracket(9.0), 2);
    }

    #[test]
    fn rejects_non_monotone() {
        assert!(Axis::vertex(vec![0.0, 0.0, 1.0]).is_err());
        assert!(Axis::<f64>::cells(vec![0.0]).is_err());
    }
}
