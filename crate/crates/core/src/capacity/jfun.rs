//! The per-hole weight `J_{h0}(rho)` and its tabulation.

use serde::{Deserialize, Serialize};

use crate::effective::H0Tag;
use crate::error::{invalid, Result, SieveError};

use super::extrapolate::{extrapolate, ExtrapolationModel};
use super::{cap_cylinder, cap_planar, cap_strip, GridSchedule, HoleSpec, PlanarSchedule};

/// How the infinite-domain capacities are approached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JSchedule {
    /// Domain sizes `l` (in hole radii) of the truncated problems.
    pub lengths: Vec<f64>,
    pub grid: GridSchedule,
    pub planar: PlanarSchedule,
}

impl Default for JSchedule {
    fn default() -> Self {
        Self {
            lengths: vec![4.0, 8.0, 16.0, 32.0],
            grid: GridSchedule { levels: 4, ..GridSchedule::default() },
            planar: PlanarSchedule::default(),
        }
    }
}

/// Decay exponents of the truncation error for a capacity in `R^m`
/// (potential decays like `|x|^(2 - m)`).
fn decay_powers(m: usize) -> Vec<f64> {
    let p = (m - 2) as f64;
    vec![p, 2.0 * p]
}

fn fit_infinite(samples: &[(f64, f64)], m: usize) -> Result<f64> {
    Ok(extrapolate(samples, &ExtrapolationModel::InversePower { powers: decay_powers(m) })?.limit)
}

/// `Cap(T' x {0}, R^N)` from Dirichlet cylinders `C(l, l)`.
pub fn cap_full_space(hole: &HoleSpec<f64>, sched: &JSchedule) -> Result<f64> {
    let mut samples = Vec::new();
    for &l in &sched.lengths {
        let l = l * hole.radius;
        let est = cap_cylinder(hole, l, l, &sched.grid)?;
        samples.push((l, est.extrapolated));
    }
    fit_infinite(&samples, hole.n_dim())
}

/// `Cap_h(T', R^(N-1))` from strip cylinders of growing radius.
pub fn cap_strip_plane(hole: &HoleSpec<f64>, h: f64, sched: &JSchedule) -> Result<f64> {
    if hole.n_dim() == 3 {
        return Err(SieveError::Unsupported(
            "strip capacity relative to R^2 vanishes; finite h0 needs N >= 4".into(),
        ));
    }
    let mut samples = Vec::new();
    for &l in &sched.lengths {
        let l = (l * hole.radius).max(4.0 * h);
        let est = cap_strip(hole, l, h, &sched.grid)?;
        samples.push((l, est.extrapolated));
    }
    samples.dedup_by(|a, b| a.0 == b.0);
    fit_infinite(&samples, hole.n_dim() - 1)
}

/// `Cap_0(T', R^(N-1))`, `N >= 4`.
pub fn cap_planar_space(hole: &HoleSpec<f64>, sched: &JSchedule) -> Result<f64> {
    if hole.n_dim() == 3 {
        return Err(SieveError::J0UndefinedAtN3);
    }
    let mut samples = Vec::new();
    for &l in &sched.lengths {
        let l = l * hole.radius;
        samples.push((l, cap_planar(hole, l, &sched.planar)?.extrapolated));
    }
    fit_infinite(&samples, hole.d)
}

/// `J_{h0}(rho)`:
/// `rho^(N-2) Cap(T' x {0}, R^N)` for `h0 = ∞`,
/// `rho^(N-2) Cap_{h0/rho}(T', R^(N-1))` for finite `h0`,
/// `2 rho^(N-3) Cap_0(T', R^(N-1))` for `h0 = 0`.
pub fn eval_j(h0: H0Tag, rho: f64, hole: &HoleSpec<f64>, sched: &JSchedule) -> Result<f64> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(invalid("rho", "must be positive and finite"));
    }
    hole.validate()?;
    let n = hole.n_dim() as i32;
    match h0 {
        H0Tag::Infinite => Ok(rho.powi(n - 2) * cap_full_space(hole, sched)?),
        H0Tag::Finite(h) => {
            if !(h > 0.0 && h.is_finite()) {
                return Err(invalid("h0", "finite h0 must be positive"));
            }
            Ok(rho.powi(n - 2) * cap_strip_plane(hole, h / rho, sched)?)
        }
        H0Tag::Zero => {
            if n == 3 {
                return Err(SieveError::J0UndefinedAtN3);
            }
            Ok(2.0 * rho.powi(n - 3) * cap_planar_space(hole, sched)?)
        }
    }
}

/// `J_{h0}` for a fixed hole, evaluated cheaply for many marks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JTable {
    /// `J(rho) = coefficient * rho^exponent`.
    Power { coefficient: f64, exponent: f64 },
    /// Log-linear interpolation between `(ln rho, ln J)` samples.
    Tabulated { ln_rho: Vec<f64>, ln_j: Vec<f64> },
}

impl JTable {
    /// Builds the table. For `h0 ∈ {0, ∞}` the `rho` dependence is factored
    /// out exactly; for finite `h0` the marks are sampled on `n` log-spaced
    /// points of `[rho_min, rho_max]`.
    pub fn build(h0: H0Tag, hole: &HoleSpec<f64>, rho_min: f64, rho_max: f64, n: usize, sched: &JSchedule) -> Result<Self> {
        let dim = hole.n_dim() as f64;
        match h0 {
            H0Tag::Infinite => Ok(JTable::Power { coefficient: eval_j(h0, 1.0, hole, sched)?, exponent: dim - 2.0 }),
            H0Tag::Zero => Ok(JTable::Power { coefficient: eval_j(h0, 1.0, hole, sched)?, exponent: dim - 3.0 }),
            H0Tag::Finite(_) => {
                if !(rho_min > 0.0 && rho_max >= rho_min) {
                    return Err(invalid("rho range", "need 0 < rho_min <= rho_max"));
                }
                let n = if rho_max > rho_min { n.max(2) } else { 1 };
                let mut ln_rho = Vec::with_capacity(n);
                let mut ln_j = Vec::with_capacity(n);
                for k in 0..n {
                    let t = if n == 1 { 0.0 } else { k as f64 / (n - 1) as f64 };
                    let lr = rho_min.ln() + t * (rho_max / rho_min).ln();
                    ln_rho.push(lr);
                    ln_j.push(eval_j(h0, lr.exp(), hole, sched)?.ln());
                }
                Ok(JTable::Tabulated { ln_rho, ln_j })
            }
        }
    }

    /// Exact power law, e.g. the flat-disk value `J_∞(rho) = 8 rho` in `R^3`.
    pub fn power(coefficient: f64, exponent: f64) -> Self {
        JTable::Power { coefficient, exponent }
    }

    pub fn eval(&self, rho: f64) -> f64 {
        match self {
            JTable::Power { coefficient, exponent } => coefficient * rho.powf(*exponent),
            JTable::Tabulated { ln_rho, ln_j } => {
                if ln_rho.len() == 1 {
                    return ln_j[0].exp();
                }
                let x = rho.ln();
                let n = ln_rho.len();
                let k = match ln_rho.iter().position(|v| *v > x) {
                    Some(0) => 0,
                    Some(k) => k - 1,
                    None => n - 2,
                }
                .min(n - 2);
                let t = (x - ln_rho[k]) / (ln_rho[k + 1] - ln_rho[k]);
                (ln_j[k] + t * (ln_j[k + 1] - ln_j[k])).exp()
            }
        }
    }
}
