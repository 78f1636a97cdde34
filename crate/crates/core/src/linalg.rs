//! Sparse symmetric operators and a Jacobi-preconditioned conjugate gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SieveError};
use crate::scalar::Real;

/// A symmetric positive (semi)definite operator known through its action.
pub trait LinearOperator<T: Real>: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[T], y: &mut [T]);
    fn diagonal(&self) -> Vec<T>;

    /// Applies an SPD preconditioner `z = M^-1 r`. Returning `false`
    /// selects the diagonal (Jacobi) preconditioner instead.
    fn precondition(&self, _r: &[T], _z: &mut [T]) -> bool {
        false
    }
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug)]
pub struct CsrMatrix<T> {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<T>,
}

/// Accumulates `(row, col, value)` entries; duplicates are summed on build.
#[derive(Clone, Debug, Default)]
pub struct TripletBuilder<T> {
    n: usize,
    entries: Vec<(usize, usize, T)>,
}

impl<T: Real> TripletBuilder<T> {
    pub fn new(n: usize) -> Self {
        Self { n, entries: Vec::new() }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        Self { n, entries: Vec::with_capacity(cap) }
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, v: T) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push((row, col, v));
    }

    /// Adds the symmetric edge term `w (x_i - x_j)^2` to the quadratic form.
    #[inline]
    pub fn add_edge(&mut self, i: usize, j: usize, w: T) {
        self.add(i, i, w);
        self.add(j, j, w);
        self.add(i, j, -w);
        self.add(j, i, -w);
    }

    pub fn build(mut self) -> CsrMatrix<T> {
        self.entries.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col = Vec::with_capacity(self.entries.len());
        let mut val: Vec<T> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                let k = val.len() - 1;
                val[k] = val[k] + v;
            } else {
                col.push(c);
                val.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..self.n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { n: self.n, row_ptr, col, val }
    }
}

impl<T: Real> CsrMatrix<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.col[a..b].binary_search(&j) {
            Ok(k) => self.val[a + k],
            Err(_) => T::zero(),
        }
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col[k];
                let v = self.val[k].as_f64();
                scale = scale.max(v.abs());
                worst = worst.max((v - self.get(j, i).as_f64()).abs());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }
}

impl<T: Real> LinearOperator<T> for CsrMatrix<T> {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[T], y: &mut [T]) {
        for i in 0..self.n {
            let mut acc = T::zero();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc = acc + self.val[k] * x[self.col[k]];
            }
            y[i] = acc;
        }
    }

    fn diagonal(&self) -> Vec<T> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }
}

/// Stopping rule for [`pcg`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CgOptions {
    /// Target for `||r|| / ||b||`.
    pub rel_tol: f64,
    /// Iteration cap; `None` means `max(100, 50 * sqrt(n))`.
    pub max_iter: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-10, max_iter: None }
    }
}

impl CgOptions {
    pub fn with_tol(rel_tol: f64) -> Self {
        Self { rel_tol, max_iter: None }
    }

    pub fn cap(&self, n: usize) -> usize {
        self.max_iter
            .unwrap_or_else(|| ((50.0 * (n as f64).sqrt()) as usize).max(100))
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    /// Final relative residual `||b - Ax|| / ||b||`.
    pub residual: f64,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    // Chunked accumulation keeps the rounding error of long sums in check.
    let mut total = T::zero();
    for (ca, cb) in a.chunks(4096).zip(b.chunks(4096)) {
        let mut s = T::zero();
        for (x, y) in ca.iter().zip(cb) {
            s = s + *x * *y;
        }
        total = total + s;
    }
    total
}

/// Solves `A x = b` by conjugate gradients with a diagonal preconditioner.
///
/// `x` holds the initial guess on entry. Returns an error when the iteration
/// cap is reached before the residual target.
pub fn pcg<T: Real, A: LinearOperator<T> + ?Sized>(
    a: &A,
    b: &[T],
    x: &mut [T],
    opts: &CgOptions,
) -> Result<CgReport> {
    let n = a.dim();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let bnorm = dot(b, b).sqrt();
    if bnorm == T::zero() {
        x.iter_mut().for_each(|v| *v = T::zero());
        return Ok(CgReport { iterations: 0, residual: 0.0 });
    }
    let mut probe = vec![T::zero(); n];
    let custom = a.precondition(&vec![T::zero(); n], &mut probe);
    let inv_diag: Vec<T> = if custom {
        Vec::new()
    } else {
        a.diagonal()
            .into_iter()
            .map(|d| if d > T::zero() { T::one() / d } else { T::one() })
            .collect()
    };
    let prec = |r: &[T], z: &mut [T]| {
        if custom {
            a.precondition(r, z);
        } else {
            for i in 0..r.len() {
                z[i] = r[i] * inv_diag[i];
            }
        }
    };

    let mut r = vec![T::zero(); n];
    a.apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z = probe;
    prec(&r, &mut z);
    let mut p = z.clone();
    let mut q = vec![T::zero(); n];
    let mut rz = dot(&r, &z);
    let tol = T::lit(opts.rel_tol) * bnorm;
    let cap = opts.cap(n);

    let mut rnorm = dot(&r, &r).sqrt();
    let mut it = 0;
    while rnorm > tol {
        if it >= cap {
            return Err(SieveError::NotConverged {
                iterations: it,
                residual: (rnorm / bnorm).as_f64(),
            });
        }
        a.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if pq <= T::zero() {
            return Err(SieveError::Singular(format!(
                "non-positive curvature p'Ap = {pq} at iteration {it}"
            )));
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] = x[i] + alpha * p[i];
            r[i] = r[i] - alpha * q[i];
        }
        prec(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rnorm = dot(&r, &r).sqrt();
        it += 1;
    }

    // Report the true residual rather than the recursively updated one.
    a.apply(x, &mut q);
    let mut acc = T::zero();
    for i in 0..n {
        let d = b[i] - q[i];
        acc = acc + d * d;
    }
    Ok(CgReport { iterations: it, residual: (acc.sqrt() / bnorm).as_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> CsrMatrix<f64> {
        let mut t = TripletBuilder::new(n);
        for i in 0..n {
            t.add(i, i, 2.0);
            if i + 1 < n {
                t.add(i, i + 1, -1.0);
                t.add(i + 1, i, -1.0);
            }
        }
        t.build()
    }

    #[test]
    fn duplicates_are_summed() {
        let mut t = TripletBuilder::new(2);
        t.add_edge(0, 1, 1.5);
        t.add(0, 0, 1.0);
        let m = t.build();
        assert_eq!(m.get(0, 0), 2.5);
        assert_eq!(m.get(0, 1), -1.5);
        assert_eq!(m.get(1, 1), 1.5);
        assert_eq!(m.nnz(), 4);
        assert_eq!(m.asymmetry(), 0.0);
    }

    #[test]
    fn cg_solves_tridiagonal() {
        let n = 50;
        let m = laplace_1d(n);
        let exact: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin()).collect();
        let mut b = vec![0.0; n];
        m.apply(&exact, &mut b);
        let mut x = vec![0.0; n];
        let rep = pcg(&m, &b, &mut x, &CgOptions::default()).unwrap();
        assert!(rep.residual <= 1e-10);
        for (a, e) in x.iter().zip(&exact) {
            assert!((a - e).abs() < 1e-8);
        }
    }

    #[test]
    fn cg_reports_failure_at_cap() {
        let m = laplace_1d(400);
        let b = vec![1.0; 400];
        let mut x = vec![0.0; 400];
        let opts = CgOptions { rel_tol: 1e-14, max_iter: Some(5) };
        match pcg(&m, &b, &mut x, &opts) {
            Err(SieveError::NotConverged { iterations, .. }) => assert_eq!(iterations, 5),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn cg_zero_rhs() {
        let m = laplace_1d(5);
        let mut x = vec![3.0; 5];
        let rep = pcg(&m, &[0.0; 5], &mut x, &CgOptions::default()).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cg_single_precision() {
        let mut t = TripletBuilder::<f32>::new(10);
        for i in 0..10 {
            t.add(i, i, 2.0);
            if i + 1 < 10 {
                t.add_edge(i, i + 1, 0.5);
            }
        }
        let m = t.build();
        let b = vec![1.0f32; 10];
        let mut x = vec![0.0f32; 10];
        let rep = pcg(&m, &b, &mut x, &CgOptions::with_tol(1e-5)).unwrap();
        assert!(rep.residual < 1e-5);
    }
}
