//! Critical hole scaling, regime classification, and the effective
//! coefficient `gamma`.
//!
//! All estimates assume an ergodic sampler, for which the random mark
//! measure `xi` coincides with the intensity `lambda` and `gamma` is a
//! deterministic number `½ ∫ J dλ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::{HoleSpec, JSchedule, JTable};
use crate::error::{invalid, Result, SieveError};
use crate::point_process::{
    classify, derive_seed, realize_sieve, sample_process, sampling_window, spatial_average, HoleShape,
    MarkLaw, ProcessSpec, SieveRealization, SieveScaling, Window,
};

/// Limit of `h_eps = delta / a` as `eps -> 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", content = "h0", rename_all = "snake_case")]
pub enum H0Tag {
    Zero,
    Finite(f64),
    Infinite,
}

impl H0Tag {
    pub fn label(&self) -> String {
        match self {
            H0Tag::Zero => "zero".into(),
            H0Tag::Finite(h) => format!("finite({h})"),
            H0Tag::Infinite => "infinite".into(),
        }
    }
}

const EXPONENT_TOL: f64 = 1e-9;

/// Regime for `delta = eps^p` in `R^N`: compares `p (N - 3)` with `N - 1`.
pub fn classify_regime(n_dim: usize, p: f64) -> Result<H0Tag> {
    if n_dim < 3 {
        return Err(invalid("N", "must be at least 3"));
    }
    if !(p > 0.0 && p.is_finite()) {
        return Err(invalid("p", "must be positive"));
    }
    let lhs = p * (n_dim as f64 - 3.0);
    let rhs = n_dim as f64 - 1.0;
    Ok(if (lhs - rhs).abs() <= EXPONENT_TOL {
        H0Tag::Finite(1.0)
    } else if lhs < rhs {
        H0Tag::Infinite
    } else {
        H0Tag::Zero
    })
}

/// `eps^2 ln(1 / delta)` for `delta = eps^p`; must vanish as `eps -> 0`
/// for the three-dimensional theory to apply.
pub fn log_admissibility(eps: f64, p: f64) -> f64 {
    eps * eps * p * (1.0 / eps).ln()
}

/// Critical hole size for `delta = eps^p`.
pub fn critical_a_power(n_dim: usize, eps: f64, p: f64) -> Result<f64> {
    if n_dim < 3 {
        return Err(invalid("N", "must be at least 3"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid("eps", "must lie in (0, 1)"));
    }
    if !(p > 0.0 && p.is_finite()) {
        return Err(invalid("p", "must be positive"));
    }
    let n = n_dim as f64;
    let delta = eps.powf(p);
    Ok(match classify_regime(n_dim, p)? {
        H0Tag::Zero => eps.powf((n - 1.0) / (n - 3.0)),
        _ => eps.powf((n - 1.0) / (n - 2.0)) * delta.powf(1.0 / (n - 2.0)),
    })
}

/// Critical hole size `a_eps`; the branch is chosen from the exponent
/// `p = ln(delta) / ln(eps)`.
pub fn critical_a(n_dim: usize, eps: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(invalid("delta", "must be positive"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid("eps", "must lie in (0, 1)"));
    }
    critical_a_power(n_dim, eps, delta.ln() / eps.ln())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRule {
    pub n_dim: usize,
    pub eps: f64,
    pub p: f64,
    pub delta: f64,
    pub a: f64,
    pub h_eps: f64,
    pub h0: H0Tag,
}

impl ScalingRule {
    pub fn new(n_dim: usize, eps: f64, p: f64) -> Result<Self> {
        let a = critical_a_power(n_dim, eps, p)?;
        let delta = eps.powf(p);
        Ok(Self { n_dim, eps, p, delta, a, h_eps: delta / a, h0: classify_regime(n_dim, p)? })
    }

    pub fn sieve_scaling(&self) -> SieveScaling {
        SieveScaling { eps: self.eps, a: self.a, delta: self.delta, h0: self.h0 }
    }
}

/// `½ μ E[J(rho)]` from a tabulated `J`.
pub fn gamma_from_table(intensity: f64, marks: &MarkLaw, table: &JTable) -> Result<f64> {
    if !(intensity >= 0.0 && intensity.is_finite()) {
        return Err(invalid("intensity", "must be finite and nonnegative"));
    }
    marks.validate()?;
    Ok(0.5 * intensity * marks.expectation(|r| table.eval(r)))
}

/// `gamma = ½ μ Σ p_i J(rho_i)`.
pub fn gamma_analytic(intensity: f64, marks: &MarkLaw, h0: H0Tag, hole: &HoleSpec<f64>, sched: &JSchedule) -> Result<f64> {
    let (lo, hi) = match marks {
        MarkLaw::Discrete { atoms } => atoms
            .iter()
            .filter(|(_, w)| *w > 0.0)
            .fold((f64::INFINITY, 0.0f64), |(a, b), (r, _)| (a.min(*r), b.max(*r))),
        MarkLaw::Uniform { lo, hi } => (*lo, *hi),
    };
    let table = JTable::build(h0, hole, lo, hi, 9, sched)?;
    gamma_from_table(intensity, marks, &table)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaAtEps {
    pub eps: f64,
    pub samples: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaEstimate {
    pub analytic: Option<f64>,
    pub eps_schedule: Vec<f64>,
    pub empirical: Vec<GammaAtEps>,
}

pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Spatial averages of `½ J(rho)` over independent realizations.
pub fn estimate_gamma_empirical(
    spec: &ProcessSpec,
    table: &JTable,
    eps_schedule: &[f64],
    domain: &Window,
    seeds: usize,
    base_seed: u64,
) -> Result<GammaEstimate> {
    if seeds < 2 {
        return Err(SieveError::InsufficientSamples("need at least two seeds for a standard error".into()));
    }
    spec.validate()?;
    let mut empirical = Vec::with_capacity(eps_schedule.len());
    for (ei, &eps) in eps_schedule.iter().enumerate() {
        let window = domain.scaled(1.0 / eps);
        let samples: Vec<f64> = (0..seeds)
            .into_par_iter()
            .map(|s| {
                let y = sample_process(spec, &window, derive_seed(base_seed, ei as u64, s as u64))?;
                spatial_average(&y, |r| 0.5 * table.eval(r), domain, eps)
            })
            .collect::<Result<_>>()?;
        let (mean, stderr) = mean_stderr(&samples);
        empirical.push(GammaAtEps { eps, samples, mean, stderr });
    }
    let analytic = gamma_from_table(spec.intensity, &spec.marks, table).ok();
    Ok(GammaEstimate { analytic, eps_schedule: eps_schedule.to_vec(), empirical })
}

/// Weighted sums over the cluster points of one realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterDiagnostics {
    pub eps: f64,
    /// `Σ_C eps^(N-1) J(rho)`.
    pub sum_j: f64,
    /// `Σ_C a^(N-1) rho^(N-1)`.
    pub sum_vol: f64,
    /// `|S'|`.
    pub shield_measure: f64,
    pub shield_stderr: f64,
    pub isolated: usize,
    pub cluster_large: usize,
    pub cluster_near: usize,
}

pub fn cluster_sums(r: &SieveRealization, table: &JTable) -> ClusterDiagnostics {
    let c = &r.classification;
    let d = c.dimension as i32;
    let SieveScaling { eps, a, .. } = c.scaling;
    let (mut sum_j, mut sum_vol) = (0.0, 0.0);
    for p in c.clusters() {
        sum_j += eps.powi(d) * table.eval(p.mark);
        sum_vol += (a * p.mark).powi(d);
    }
    let (i, c1, c2) = c.counts();
    ClusterDiagnostics {
        eps,
        sum_j,
        sum_vol,
        shield_measure: r.shield_measure.value,
        shield_stderr: r.shield_measure.stderr,
        isolated: i,
        cluster_large: c1,
        cluster_near: c2,
    }
}

/// Seed-averaged cluster diagnostics over an `eps` sweep with
/// `delta = eps^p`.
pub fn cluster_study(
    spec: &ProcessSpec,
    n_dim: usize,
    p: f64,
    hole: HoleShape,
    table: &JTable,
    eps_schedule: &[f64],
    domain: &Window,
    seeds: usize,
    base_seed: u64,
) -> Result<Vec<ClusterDiagnostics>> {
    let mut out = Vec::new();
    for (ei, &eps) in eps_schedule.iter().enumerate() {
        let rule = ScalingRule::new(n_dim, eps, p)?;
        let scale = rule.sieve_scaling();
        let window = sampling_window(domain, &scale, spec.marks.max_mark());
        let runs: Vec<ClusterDiagnostics> = (0..seeds)
            .into_par_iter()
            .map(|s| {
                let y = sample_process(spec, &window, derive_seed(base_seed, ei as u64, s as u64))?;
                let c = classify(&y, &scale, domain)?;
                Ok(cluster_sums(&realize_sieve(&c, hole)?, table))
            })
            .collect::<Result<_>>()?;
        let n = runs.len().max(1) as f64;
        let avg = |f: &dyn Fn(&ClusterDiagnostics) -> f64| runs.iter().map(f).sum::<f64>() / n;
        let cnt = |f: &dyn Fn(&ClusterDiagnostics) -> usize| runs.iter().map(f).sum::<usize>();
        out.push(ClusterDiagnostics {
            eps,
            sum_j: avg(&|d| d.sum_j),
            sum_vol: avg(&|d| d.sum_vol),
            shield_measure: avg(&|d| d.shield_measure),
            shield_stderr: (runs.iter().map(|d| d.shield_stderr.powi(2)).sum::<f64>()).sqrt() / n,
            isolated: cnt(&|d| d.isolated),
            cluster_large: cnt(&|d| d.cluster_large),
            cluster_near: cnt(&|d| d.cluster_near),
        });
    }
    Ok(out)
}
