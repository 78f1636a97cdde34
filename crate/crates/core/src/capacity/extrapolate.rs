//! Least-squares extrapolation of sequences to a limit.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SieveError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ExtrapolationModel {
    /// `v(x) = c0 + c1 x^order` for a grid spacing `x -> 0`.
    Richardson { order: f64 },
    /// `v(x) = c0 + sum_k c_k x^(-p_k)` for a domain size `x -> infinity`.
    InversePower { powers: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub limit: f64,
    pub coefficients: Vec<f64>,
    /// Root-mean-square misfit of the samples.
    pub residual: f64,
}

fn basis(model: &ExtrapolationModel, x: f64, n_terms: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    match model {
        ExtrapolationModel::Richardson { order } => row.push(x.powf(*order)),
        ExtrapolationModel::InversePower { powers } => row.extend(powers.iter().map(|p| x.powf(-p))),
    }
    row.truncate(n_terms);
    row
}

/// Fits `model` to `(parameter, value)` samples and returns the limit.
///
/// With fewer samples than model terms the highest terms are dropped.
pub fn extrapolate(samples: &[(f64, f64)], model: &ExtrapolationModel) -> Result<Extrapolation> {
    if samples.len() < 2 {
        return Err(SieveError::DegenerateFit("need at least two samples".into()));
    }
    if samples.iter().any(|(x, v)| !(x.is_finite() && *x > 0.0 && v.is_finite())) {
        return Err(SieveError::DegenerateFit("parameters must be positive and values finite".into()));
    }
    let full = match model {
        ExtrapolationModel::Richardson { order } => {
            if !(*order > 0.0) {
                return Err(SieveError::DegenerateFit("order must be positive".into()));
            }
            2
        }
        ExtrapolationModel::InversePower { powers } => {
            if powers.is_empty() || powers.iter().any(|p| !(*p > 0.0)) {
                return Err(SieveError::DegenerateFit("powers must be positive".into()));
            }
            1 + powers.len()
        }
    };
    let k = full.min(samples.len());
    let rows: Vec<Vec<f64>> = samples.iter().map(|(x, _)| basis(model, *x, k)).collect();
    let y: Vec<f64> = samples.iter().map(|(_, v)| *v).collect();
    let coef = least_squares(&rows, &y)?;
    let rss: f64 = rows
        .iter()
        .zip(&y)
        .map(|(r, v)| {
            let f: f64 = r.iter().zip(&coef).map(|(a, c)| a * c).sum();
            (f - v) * (f - v)
        })
        .sum();
    Ok(Extrapolation { limit: coef[0], residual: (rss / y.len() as f64).sqrt(), coefficients: coef })
}

/// Solves `min ||A c - y||` by modified Gram-Schmidt QR with column scaling.
fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let m = rows.len();
    let k = rows[0].len();
    let mut q: Vec<Vec<f64>> = (0..k).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let scale: Vec<f64> = q.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    if scale.iter().any(|s| *s == 0.0) {
        return Err(SieveError::DegenerateFit("zero column".into()));
    }
    for (c, s) in q.iter_mut().zip(&scale) {
        c.iter_mut().for_each(|v| *v /= s);
    }
    let mut r = vec![vec![0.0; k]; k];
    for j in 0..k {
        for i in 0..j {
            let d: f64 = (0..m).map(|t| q[i][t] * q[j][t]).sum();
            r[i][j] = d;
            for t in 0..m {
                q[j][t] -= d * q[i][t];
            }
        }
        let nrm: f64 = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if nrm < 1e-10 {
            return Err(SieveError::DegenerateFit("samples do not determine the model".into()));
        }
        r[j][j] = nrm;
        q[j].iter_mut().for_each(|v| *v /= nrm);
    }
    let qty: Vec<f64> = (0..k).map(|j| (0..m).map(|t| q[j][t] * y[t]).sum()).collect();
    let mut c = vec![0.0; k];
    for j in (0..k).rev() {
        let mut acc = qty[j];
        for i in j + 1..k {
            acc -= r[j][i] * c[i];
        }
        c[j] = acc / r[j][j];
    }
    Ok(c.iter().zip(&scale).map(|(ci, s)| ci / s).collect())
}
