//! Marked point processes in a finite window, nearest-neighbour geometry,
//! thinning, isolated/cluster classification and sieve materialization.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::effective::H0Tag;
use crate::error::{invalid, Result, SieveError};

/// Axis-aligned box `[lo, hi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Window {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(invalid("window", "lo/hi dimension mismatch"));
        }
        if lo.iter().chain(&hi).any(|x| !x.is_finite()) {
            return Err(invalid("window", "non-finite bound"));
        }
        if lo.iter().zip(&hi).any(|(a, b)| b < a) {
            return Err(invalid("window", "hi < lo"));
        }
        Ok(Self { lo, hi })
    }

    pub fn unit(d: usize) -> Self {
        Self { lo: vec![0.0; d], hi: vec![1.0; d] }
    }

    pub fn cube(d: usize, lo: f64, hi: f64) -> Self {
        Self { lo: vec![lo; d], hi: vec![hi; d] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *v >= *a && *v < *b)
    }

    /// Whether the closed ball lies inside the closed box.
    pub fn contains_ball(&self, c: &[f64], r: f64) -> bool {
        c.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| v - r >= *a && v + r <= *b)
    }

    pub fn padded(&self, pad: f64) -> Self {
        Self {
            lo: self.lo.iter().map(|x| x - pad).collect(),
            hi: self.hi.iter().map(|x| x + pad).collect(),
        }
    }

    pub fn scaled(&self, f: f64) -> Self {
        Self {
            lo: self.lo.iter().map(|x| x * f).collect(),
            hi: self.hi.iter().map(|x| x * f).collect(),
        }
    }
}

/// Centre `y'` with mark `rho`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkedPoint {
    pub center: Vec<f64>,
    pub mark: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessKind {
    Poisson,
    /// Lattice `spacing * (k + offset)`, `k` integer, anchored at the origin.
    Lattice {
        #[serde(default)]
        offset: f64,
    },
    PerturbedLattice,
    /// Matérn type II: Poisson parents with random birth times, a parent is
    /// removed if an older parent lies within `radius`.
    MaternHardcore { radius: f64 },
}

impl ProcessKind {
    pub fn tag(&self) -> &'static str {
        match self {
            ProcessKind::Poisson => "poisson",
            ProcessKind::Lattice { .. } => "lattice",
            ProcessKind::PerturbedLattice => "perturbed_lattice",
            ProcessKind::MaternHardcore { .. } => "matern_hardcore",
        }
    }

    /// Whether `xi = lambda` can be assumed (mixing samplers, or lattices with
    /// deterministic marks).
    pub fn is_ergodic(&self) -> bool {
        true
    }
}

/// Distribution of the marks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum MarkLaw {
    /// Atoms `(rho, weight)`; weights are normalized.
    Discrete { atoms: Vec<(f64, f64)> },
    Uniform { lo: f64, hi: f64 },
}

impl MarkLaw {
    pub fn atom(rho: f64) -> Self {
        MarkLaw::Discrete { atoms: vec![(rho, 1.0)] }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MarkLaw::Discrete { atoms } => {
                if atoms.is_empty() {
                    return Err(invalid("mark_law", "no atoms"));
                }
                if atoms.iter().any(|(r, _)| !(r.is_finite() && *r > 0.0)) {
                    return Err(invalid("mark_law", "nonpositive support"));
                }
                if atoms.iter().any(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
                    return Err(invalid("mark_law", "negative weight"));
                }
                if atoms.iter().map(|(_, w)| w).sum::<f64>() <= 0.0 {
                    return Err(invalid("mark_law", "zero total weight"));
                }
                Ok(())
            }
            MarkLaw::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && *lo > 0.0 && hi >= lo) {
                    return Err(invalid("mark_law", "nonpositive support"));
                }
                Ok(())
            }
        }
    }

    pub fn max_mark(&self) -> f64 {
        match self {
            MarkLaw::Discrete { atoms } => atoms
                .iter()
                .filter(|(_, w)| *w > 0.0)
                .map(|(r, _)| *r)
                .fold(0.0, f64::max),
            MarkLaw::Uniform { hi, .. } => *hi,
        }
    }

    fn single_atom(&self) -> Option<f64> {
        match self {
            MarkLaw::Discrete { atoms } => {
                let live: Vec<_> = atoms.iter().filter(|(_, w)| *w > 0.0).collect();
                (live.len() == 1).then(|| live[0].0)
            }
            MarkLaw::Uniform { lo, hi } => (lo == hi).then_some(*lo),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            MarkLaw::Discrete { atoms } => {
                let total: f64 = atoms.iter().map(|(_, w)| w).sum();
                let mut u = rng.gen::<f64>() * total;
                for (r, w) in atoms {
                    if u < *w {
                        return *r;
                    }
                    u -= w;
                }
                atoms.iter().rev().find(|(_, w)| *w > 0.0).unwrap().0
            }
            MarkLaw::Uniform { lo, hi } => {
                if lo == hi {
                    *lo
                } else {
                    rng.gen_range(*lo..*hi)
                }
            }
        }
    }

    /// `E[g(rho)]`.
    pub fn expectation(&self, g: impl Fn(f64) -> f64) -> f64 {
        match self {
            MarkLaw::Discrete { atoms } => {
                let total: f64 = atoms.iter().map(|(_, w)| w).sum();
                atoms.iter().filter(|(_, w)| *w > 0.0).map(|(r, w)| w * g(*r)).sum::<f64>() / total
            }
            MarkLaw::Uniform { lo, hi } => {
                if lo == hi {
                    return g(*lo);
                }
                // composite Simpson
                let n = 2000;
                let h = (hi - lo) / n as f64;
                let mut s = g(*lo) + g(*hi);
                for i in 1..n {
                    let x = lo + h * i as f64;
                    s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(x);
                }
                s * h / 3.0 / (hi - lo)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub kind: ProcessKind,
    /// Points per unit d-volume.
    pub intensity: f64,
    pub marks: MarkLaw,
}

impl ProcessSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.intensity.is_finite() {
            return Err(invalid("intensity", "nonfinite intensity"));
        }
        if self.intensity <= 0.0 {
            return Err(invalid("intensity", "must be positive"));
        }
        if let ProcessKind::MaternHardcore { radius } = self.kind {
            if !(radius.is_finite() && radius >= 0.0) {
                return Err(invalid("radius", "hardcore radius must be finite and nonnegative"));
            }
        }
        self.marks.validate()
    }
}

/// Finite realization of a marked point process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PointSetRecord", into = "PointSetRecord")]
pub struct MarkedPointSet {
    pub dimension: usize,
    pub points: Vec<MarkedPoint>,
    pub window: Window,
    pub seed: u64,
    pub process: ProcessKind,
}

#[derive(Clone, Serialize, Deserialize)]
struct PointSetRecord {
    dimension: usize,
    window: Window,
    process: ProcessKind,
    seed: u64,
    points: Vec<Vec<f64>>,
}

impl From<MarkedPointSet> for PointSetRecord {
    fn from(s: MarkedPointSet) -> Self {
        let points = s
            .points
            .into_iter()
            .map(|p| {
                let mut v = p.center;
                v.push(p.mark);
                v
            })
            .collect();
        Self { dimension: s.dimension, window: s.window, process: s.process, seed: s.seed, points }
    }
}

impl TryFrom<PointSetRecord> for MarkedPointSet {
    type Error = SieveError;

    fn try_from(r: PointSetRecord) -> Result<Self> {
        let d = r.dimension;
        let mut points = Vec::with_capacity(r.points.len());
        for mut v in r.points {
            if v.len() != d + 1 {
                return Err(invalid("points", format!("expected {} entries per point", d + 1)));
            }
            let mark = v.pop().unwrap();
            if !(mark > 0.0) {
                return Err(invalid("points", "mark must be positive"));
            }
            points.push(MarkedPoint { center: v, mark });
        }
        Ok(Self { dimension: d, points, window: r.window, seed: r.seed, process: r.process })
    }
}

impl MarkedPointSet {
    pub fn empty(window: Window, process: ProcessKind, seed: u64) -> Self {
        Self { dimension: window.dim(), points: Vec::new(), window, seed, process }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Admissibility: positive marks, centres in the window, no repeated centre.
    pub fn check_admissible(&self) -> bool {
        if self.points.iter().any(|p| !(p.mark > 0.0) || !self.window.contains(&p.center)) {
            return false;
        }
        let nd = neighbor_data(self);
        nd.d.iter().all(|d| *d > 0.0)
    }
}

/// Seed for stream `(a, b)` derived from a base seed (SplitMix64 mixing).
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(base) ^ a.wrapping_mul(0xD6E8_FEB8_6659_FD93)) ^ b)
}

fn uniform_in<R: Rng>(rng: &mut R, w: &Window) -> Vec<f64> {
    w.lo
        .iter()
        .zip(&w.hi)
        .map(|(a, b)| if b > a { rng.gen_range(*a..*b) } else { *a })
        .collect()
}

fn poisson_count<R: Rng>(rng: &mut R, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("positive finite mean");
    d.sample(rng) as usize
}

/// Integer multi-indices `k` with `lo <= spacing * (k + offset) < hi`.
fn lattice_indices(w: &Window, spacing: f64, offset: f64) -> Vec<Vec<i64>> {
    let ranges: Vec<(i64, i64)> = w
        .lo
        .iter()
        .zip(&w.hi)
        .map(|(a, b)| {
            let mut k0 = (a / spacing - offset).ceil() as i64;
            while spacing * (k0 as f64 + offset) < *a {
                k0 += 1;
            }
            while spacing * ((k0 - 1) as f64 + offset) >= *a {
                k0 -= 1;
            }
            let mut k1 = (b / spacing - offset).ceil() as i64 - 1;
            // guard against rounding at the open upper face
            while spacing * (k1 as f64 + offset) >= *b {
                k1 -= 1;
            }
            (k0, k1)
        })
        .collect();
    let mut out = vec![Vec::new()];
    for (k0, k1) in ranges {
        let mut next = Vec::new();
        for prefix in &out {
            for k in k0..=k1 {
                let mut v = prefix.clone();
                v.push(k);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// Samples `spec` in `window` from `seed`. Equal inputs give identical output.
pub fn sample_process(spec: &ProcessSpec, window: &Window, seed: u64) -> Result<MarkedPointSet> {
    spec.validate()?;
    let d = window.dim();
    let mut out = MarkedPointSet::empty(window.clone(), spec.kind.clone(), seed);
    if window.volume() <= 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = spec.intensity;
    match &spec.kind {
        ProcessKind::Poisson => {
            let n = poisson_count(&mut rng, mu * window.volume());
            for _ in 0..n {
                let center = uniform_in(&mut rng, window);
                let mark = spec.marks.sample(&mut rng);
                out.points.push(MarkedPoint { center, mark });
            }
        }
        ProcessKind::Lattice { offset } => {
            let s = mu.powf(-1.0 / d as f64);
            let atom = spec.marks.single_atom();
            for k in lattice_indices(window, s, *offset) {
                let center: Vec<f64> = k.iter().map(|ki| s * (*ki as f64 + offset)).collect();
                let mark = atom.unwrap_or_else(|| spec.marks.sample(&mut rng));
                out.points.push(MarkedPoint { center, mark });
            }
        }
        ProcessKind::PerturbedLattice => {
            let s = mu.powf(-1.0 / d as f64);
            // all cells that can drop a point into the window
            let cover = Window {
                lo: window.lo.iter().map(|a| (a / s).floor() * s).collect(),
                hi: window.hi.clone(),
            };
            for k in lattice_indices(&cover, s, 0.0) {
                let center: Vec<f64> =
                    k.iter().map(|ki| s * (*ki as f64 + rng.gen::<f64>())).collect();
                let mark = spec.marks.sample(&mut rng);
                if window.contains(&center) {
                    out.points.push(MarkedPoint { center, mark });
                }
            }
        }
        ProcessKind::MaternHardcore { radius } => {
            let pad = window.padded(*radius);
            let n = poisson_count(&mut rng, mu * pad.volume());
            let mut parents = Vec::with_capacity(n);
            for _ in 0..n {
                let c = uniform_in(&mut rng, &pad);
                let t: f64 = rng.gen();
                let m = spec.marks.sample(&mut rng);
                parents.push((c, t, m));
            }
            let centers: Vec<Vec<f64>> = parents.iter().map(|p| p.0.clone()).collect();
            let list = CellList::new(&centers, radius.max(1e-9));
            for (i, (c, t, m)) in parents.iter().enumerate() {
                if !window.contains(c) {
                    continue;
                }
                let older = list
                    .within(&centers, c, *radius)
                    .into_iter()
                    .any(|j| j != i && parents[j].1 < *t);
                if !older {
                    out.points.push(MarkedPoint { center: c.clone(), mark: *m });
                }
            }
        }
    }
    Ok(out)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Uniform bucket grid over points for neighbour queries.
pub struct CellList {
    h: f64,
    buckets: HashMap<Vec<i64>, Vec<usize>>,
    kmin: Vec<i64>,
    kmax: Vec<i64>,
}

impl CellList {
    pub fn new(points: &[Vec<f64>], h: f64) -> Self {
        let d = points.first().map_or(0, |p| p.len());
        let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        let mut kmin = vec![i64::MAX; d];
        let mut kmax = vec![i64::MIN; d];
        for (i, p) in points.iter().enumerate() {
            let k = Self::key(p, h);
            for a in 0..d {
                kmin[a] = kmin[a].min(k[a]);
                kmax[a] = kmax[a].max(k[a]);
            }
            buckets.entry(k).or_default().push(i);
        }
        Self { h, buckets, kmin, kmax }
    }

    fn key(p: &[f64], h: f64) -> Vec<i64> {
        p.iter().map(|x| (x / h).floor() as i64).collect()
    }

    fn visit_shell(&self, base: &[i64], k: i64, mut f: impl FnMut(usize)) {
        let d = base.len();
        let mut off = vec![-k; d];
        loop {
            if off.iter().any(|o| o.abs() == k) {
                let key: Vec<i64> = base.iter().zip(&off).map(|(b, o)| b + o).collect();
                if let Some(v) = self.buckets.get(&key) {
                    v.iter().for_each(|i| f(*i));
                }
            }
            let mut a = 0;
            loop {
                if a == d {
                    return;
                }
                off[a] += 1;
                if off[a] > k {
                    off[a] = -k;
                    a += 1;
                } else {
                    break;
                }
            }
        }
    }

    /// Indices with `|p - x| < r` (strict).
    pub fn within(&self, points: &[Vec<f64>], x: &[f64], r: f64) -> Vec<usize> {
        let base = Self::key(x, self.h);
        let reach = (r / self.h).ceil() as i64 + 1;
        let mut out = Vec::new();
        for k in 0..=reach {
            self.visit_shell(&base, k, |i| {
                if dist2(&points[i], x) < r * r {
                    out.push(i);
                }
            });
        }
        out
    }

    /// Distance from `points[i]` to its nearest other point (infinity if none).
    pub fn nearest(&self, points: &[Vec<f64>], i: usize) -> f64 {
        let x = &points[i];
        let base = Self::key(x, self.h);
        let span = base
            .iter()
            .enumerate()
            .map(|(a, b)| (b - self.kmin[a]).max(self.kmax[a] - b))
            .max()
            .unwrap_or(0);
        let mut best = f64::INFINITY;
        for k in 0..=span {
            // any point in shell k or beyond is at least (k - 1) h away
            if best.is_finite() && ((k - 1) as f64) * self.h > best {
                break;
            }
            self.visit_shell(&base, k, |j| {
                if j != i {
                    best = best.min(dist2(&points[j], x).sqrt());
                }
            });
        }
        best
    }
}

fn bucket_size(set: &MarkedPointSet) -> f64 {
    let n = set.len().max(1) as f64;
    let vol = set.window.volume();
    let s = if vol > 0.0 { (vol / n).powf(1.0 / set.dimension.max(1) as f64) } else { 1.0 };
    if s.is_finite() && s > 0.0 {
        s
    } else {
        1.0
    }
}

/// Nearest-neighbour distance `d_Y` and truncated radius `r = min(d_Y / 2, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborData {
    pub d: Vec<f64>,
    pub r: Vec<f64>,
}

pub fn neighbor_data(y: &MarkedPointSet) -> NeighborData {
    let centers: Vec<Vec<f64>> = y.points.iter().map(|p| p.center.clone()).collect();
    let list = CellList::new(&centers, bucket_size(y));
    let d: Vec<f64> = (0..centers.len()).map(|i| list.nearest(&centers, i)).collect();
    let r = d.iter().map(|di| (di / 2.0).min(1.0)).collect();
    NeighborData { d, r }
}

/// Thinned process `M_sigma`: points with `min(d_Y / 2, 1 / rho) < sigma`.
pub fn thin(y: &MarkedPointSet, sigma: f64) -> Result<MarkedPointSet> {
    if !(sigma > 0.0) {
        return Err(invalid("sigma", "must be positive"));
    }
    let nd = neighbor_data(y);
    let mut out = y.clone();
    out.points = y
        .points
        .iter()
        .zip(&nd.d)
        .filter(|(p, d)| (**d / 2.0).min(1.0 / p.mark) < sigma)
        .map(|(p, _)| p.clone())
        .collect();
    Ok(out)
}

/// Length scales of a sieve at scale `eps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SieveScaling {
    pub eps: f64,
    pub a: f64,
    pub delta: f64,
    pub h0: H0Tag,
}

impl SieveScaling {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eps", self.eps), ("a", self.a), ("delta", self.delta)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, "must be positive and finite"));
            }
        }
        Ok(())
    }

    pub fn h_eps(&self) -> f64 {
        self.delta / self.a
    }
}

/// Window in `y` coordinates covering `domain / eps`, padded so that
/// classification near the boundary sees every relevant neighbour.
pub fn sampling_window(domain: &Window, scale: &SieveScaling, max_mark: f64) -> Window {
    let pad = 2.0 * (scale.a / scale.eps) * max_mark + 2.0;
    domain.scaled(1.0 / scale.eps).padded(pad)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PointLabel {
    #[serde(rename = "I")]
    Isolated,
    #[serde(rename = "C1")]
    ClusterLarge,
    #[serde(rename = "C2")]
    ClusterNear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedPoint {
    /// Index into the classified point set.
    pub index: usize,
    pub center: Vec<f64>,
    pub mark: f64,
    pub r: f64,
    pub label: PointLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub isolated: Vec<ClassifiedPoint>,
    pub cluster_large: Vec<ClassifiedPoint>,
    pub cluster_near: Vec<ClassifiedPoint>,
    pub scaling: SieveScaling,
    pub domain: Window,
    pub dimension: usize,
}

impl Classification {
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.isolated.len(), self.cluster_large.len(), self.cluster_near.len())
    }

    pub fn clusters(&self) -> impl Iterator<Item = &ClassifiedPoint> {
        self.cluster_large.iter().chain(&self.cluster_near)
    }

    pub fn all(&self) -> impl Iterator<Item = &ClassifiedPoint> {
        self.isolated.iter().chain(self.clusters())
    }

    pub fn len(&self) -> usize {
        self.isolated.len() + self.cluster_large.len() + self.cluster_near.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits the points with `eps y' in domain` into isolated, `C1` and `C2`.
pub fn classify(y: &MarkedPointSet, scale: &SieveScaling, domain: &Window) -> Result<Classification> {
    scale.validate()?;
    if domain.dim() != y.dimension {
        return Err(invalid("domain", "dimension differs from the point set"));
    }
    let SieveScaling { eps, a, delta, h0 } = *scale;
    let nd = neighbor_data(y);
    let inside: Vec<usize> = (0..y.len())
        .filter(|&i| {
            let x: Vec<f64> = y.points[i].center.iter().map(|c| c * eps).collect();
            domain.contains(&x)
        })
        .collect();
    let centers: Vec<Vec<f64>> = inside.iter().map(|&i| y.points[i].center.clone()).collect();
    let max_mark = inside.iter().map(|&i| y.points[i].mark).fold(0.0, f64::max);
    let list = CellList::new(&centers, 1.0);
    let ratio = a / eps;

    let mut out = Classification {
        isolated: Vec::new(),
        cluster_large: Vec::new(),
        cluster_near: Vec::new(),
        scaling: *scale,
        domain: domain.clone(),
        dimension: y.dimension,
    };
    for (k, &i) in inside.iter().enumerate() {
        let p = &y.points[i];
        let r = nd.r[i];
        let size_ok = match h0 {
            H0Tag::Infinite => 2.0 * a * p.mark < (eps * r).min(delta),
            _ => 2.0 * a * p.mark < eps * r,
        };
        // condition (2), in y units: |y - y~| < r + 2 (a / eps) rho~
        let reach = r + 2.0 * ratio * max_mark;
        let separated = list.within(&centers, &p.center, reach).into_iter().all(|j| {
            j == k || {
                let rho_t = y.points[inside[j]].mark;
                dist2(&centers[j], &p.center).sqrt() >= r + 2.0 * ratio * rho_t
            }
        });
        let label = if !size_ok {
            PointLabel::ClusterLarge
        } else if separated {
            PointLabel::Isolated
        } else {
            PointLabel::ClusterNear
        };
        let cp = ClassifiedPoint { index: i, center: p.center.clone(), mark: p.mark, r, label };
        match label {
            PointLabel::Isolated => out.isolated.push(cp),
            PointLabel::ClusterLarge => out.cluster_large.push(cp),
            PointLabel::ClusterNear => out.cluster_near.push(cp),
        }
    }
    Ok(out)
}

/// Shape of the reference hole `T'`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum HoleShape {
    /// Ball `B'(0, radius)` with `radius` in `(0, 1]`.
    Ball { radius: f64 },
}

impl HoleShape {
    pub fn radius(&self) -> f64 {
        match self {
            HoleShape::Ball { radius } => *radius,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.radius();
        if !(r > 0.0 && r <= 1.0) {
            return Err(invalid("hole", "ball radius must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactRegion {
    pub center: Vec<f64>,
    pub radius: f64,
    pub label: PointLabel,
    /// The region is cut by the boundary of the domain.
    pub clipped: bool,
    /// Index into the classification list for its label.
    pub index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureMethod {
    Empty,
    Exact,
    InclusionExclusion,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub value: f64,
    pub stderr: f64,
    pub method: MeasureMethod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SieveRealization {
    pub classification: Classification,
    pub contact_regions: Vec<ContactRegion>,
    /// Balls `B'(eps y', 2 a rho)` over the cluster points.
    pub shield: Vec<Ball>,
    pub hole_shape: HoleShape,
    pub shield_measure: MeasureEstimate,
}

impl SieveRealization {
    pub fn scaling(&self) -> &SieveScaling {
        &self.classification.scaling
    }

    pub fn isolated_regions(&self) -> impl Iterator<Item = &ContactRegion> {
        self.contact_regions.iter().filter(|c| c.label == PointLabel::Isolated)
    }

    pub fn cluster_regions(&self) -> impl Iterator<Item = &ContactRegion> {
        self.contact_regions.iter().filter(|c| c.label != PointLabel::Isolated)
    }
}

/// Number of Monte Carlo samples used for overlapping shields.
pub const SHIELD_MC_SAMPLES: usize = 1_000_000;

/// Materializes contact regions and the cluster shield `S'`.
pub fn realize_sieve(c: &Classification, hole: HoleShape) -> Result<SieveRealization> {
    hole.validate()?;
    let SieveScaling { eps, a, .. } = c.scaling;
    let t_radius = hole.radius();
    let mut regions = Vec::with_capacity(c.len());
    for (list, label) in [
        (&c.isolated, PointLabel::Isolated),
        (&c.cluster_large, PointLabel::ClusterLarge),
        (&c.cluster_near, PointLabel::ClusterNear),
    ] {
        for (k, p) in list.iter().enumerate() {
            let center: Vec<f64> = p.center.iter().map(|x| x * eps).collect();
            let radius = a * p.mark * t_radius;
            let clipped = !c.domain.contains_ball(&center, radius);
            regions.push(ContactRegion { center, radius, label, clipped, index: k });
        }
    }
    let shield: Vec<Ball> = c
        .clusters()
        .map(|p| Ball { center: p.center.iter().map(|x| x * eps).collect(), radius: 2.0 * a * p.mark })
        .collect();
    let seed = derive_seed(c.len() as u64, shield.len() as u64, 0x5eed);
    let shield_measure = union_measure(&shield, &c.domain, SHIELD_MC_SAMPLES, seed);
    Ok(SieveRealization {
        classification: c.clone(),
        contact_regions: regions,
        shield,
        hole_shape: hole,
        shield_measure,
    })
}

/// Volume of the unit ball in R^d.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI / d as f64 * unit_ball_volume(d - 2),
    }
}

fn lens_measure(d: usize, r1: f64, r2: f64, dist: f64) -> Option<f64> {
    use std::f64::consts::PI;
    if dist >= r1 + r2 {
        return Some(0.0);
    }
    if dist <= (r1 - r2).abs() {
        return Some(unit_ball_volume(d) * r1.min(r2).powi(d as i32));
    }
    match d {
        2 => {
            let a1 = ((dist * dist + r1 * r1 - r2 * r2) / (2.0 * dist * r1)).clamp(-1.0, 1.0).acos();
            let a2 = ((dist * dist + r2 * r2 - r1 * r1) / (2.0 * dist * r2)).clamp(-1.0, 1.0).acos();
            let k = ((-dist + r1 + r2) * (dist + r1 - r2) * (dist - r1 + r2) * (dist + r1 + r2))
                .max(0.0)
                .sqrt();
            Some(r1 * r1 * a1 + r2 * r2 * a2 - 0.5 * k)
        }
        3 => Some(
            PI * (r1 + r2 - dist).powi(2)
                * (dist * dist + 2.0 * dist * r2 - 3.0 * r2 * r2 + 2.0 * dist * r1 + 6.0 * r1 * r2
                    - 3.0 * r1 * r1)
                / (12.0 * dist),
        ),
        _ => None,
    }
}

fn overlaps(a: &Ball, b: &Ball) -> bool {
    dist2(&a.center, &b.center).sqrt() < a.radius + b.radius
}

/// Connected components of the overlap graph.
pub fn ball_components(balls: &[Ball]) -> Vec<Vec<usize>> {
    let n = balls.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    if n > 0 {
        let rmax = balls.iter().map(|b| b.radius).fold(0.0, f64::max);
        let centers: Vec<Vec<f64>> = balls.iter().map(|b| b.center.clone()).collect();
        let list = CellList::new(&centers, (2.0 * rmax).max(1e-12));
        for i in 0..n {
            for j in list.within(&centers, &centers[i], 2.0 * rmax) {
                if j > i && overlaps(&balls[i], &balls[j]) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a] = b;
                }
            }
        }
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort();
    out
}

/// Lebesgue measure of `window ∩ (union of balls)`: exact when balls are
/// disjoint and inside the window, pairwise inclusion-exclusion when no three
/// balls meet, Monte Carlo per component otherwise.
pub fn union_measure(balls: &[Ball], window: &Window, mc_samples: usize, seed: u64) -> MeasureEstimate {
    if balls.is_empty() {
        return MeasureEstimate { value: 0.0, stderr: 0.0, method: MeasureMethod::Empty };
    }
    let d = window.dim();
    let mut value = 0.0;
    let mut var = 0.0;
    let mut method = MeasureMethod::Exact;
    for (ci, comp) in ball_components(balls).into_iter().enumerate() {
        let inside = comp.iter().all(|&i| window.contains_ball(&balls[i].center, balls[i].radius));
        let pairs: Vec<(usize, usize)> = comp
            .iter()
            .flat_map(|&i| comp.iter().map(move |&j| (i, j)))
            .filter(|&(i, j)| i < j && overlaps(&balls[i], &balls[j]))
            .collect();
        let triple = comp.iter().any(|&i| {
            let nb: Vec<usize> = comp.iter().copied().filter(|&j| j != i && overlaps(&balls[i], &balls[j])).collect();
            nb.iter().any(|&j| nb.iter().any(|&k| j < k && overlaps(&balls[j], &balls[k])))
        });
        let analytic = if inside && !triple {
            let mut v: f64 = comp.iter().map(|&i| unit_ball_volume(d) * balls[i].radius.powi(d as i32)).sum();
            let mut ok = true;
            for &(i, j) in &pairs {
                let dist = dist2(&balls[i].center, &balls[j].center).sqrt();
                match lens_measure(d, balls[i].radius, balls[j].radius, dist) {
                    Some(l) => v -= l,
                    None => ok = false,
                }
            }
            ok.then_some(v)
        } else {
            None
        };
        match analytic {
            Some(v) => {
                value += v;
                if !pairs.is_empty() && method == MeasureMethod::Exact {
                    method = MeasureMethod::InclusionExclusion;
                }
            }
            None => {
                let (v, se) = monte_carlo_component(balls, &comp, window, mc_samples, derive_seed(seed, ci as u64, 1));
                value += v;
                var += se * se;
                method = MeasureMethod::MonteCarlo;
            }
        }
    }
    MeasureEstimate { value, stderr: var.sqrt(), method }
}

fn monte_carlo_component(
    balls: &[Ball],
    comp: &[usize],
    window: &Window,
    samples: usize,
    seed: u64,
) -> (f64, f64) {
    let d = window.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for &i in comp {
        for a in 0..d {
            lo[a] = lo[a].min(balls[i].center[a] - balls[i].radius).max(window.lo[a]);
            hi[a] = hi[a].max(balls[i].center[a] + balls[i].radius).min(window.hi[a]);
        }
    }
    if lo.iter().zip(&hi).any(|(a, b)| b <= a) {
        return (0.0, 0.0);
    }
    let bbox = Window { lo, hi };
    let vol = bbox.volume();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let n = samples.max(1);
    for _ in 0..n {
        let x = uniform_in(&mut rng, &bbox);
        if comp.iter().any(|&i| dist2(&x, &balls[i].center) < balls[i].radius * balls[i].radius) {
            hits += 1;
        }
    }
    let p = hits as f64 / n as f64;
    (vol * p, vol * (p * (1.0 - p) / n as f64).sqrt())
}

/// `(eps^d / |B|) * sum over eps y' in B of g(rho)`.
pub fn spatial_average(y: &MarkedPointSet, g: impl Fn(f64) -> f64, b: &Window, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(invalid("eps", "must be positive"));
    }
    let vol = b.volume();
    if y.is_empty() || vol <= 0.0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for p in &y.points {
        let x: Vec<f64> = p.center.iter().map(|c| c * eps).collect();
        if b.contains(&x) {
            sum += g(p.mark);
        }
    }
    Ok(eps.powi(y.dimension as i32) / vol * sum)
}

/// Balls `B'(y', d_Y / 2)` are pairwise disjoint.
pub fn check_disjoint_balls(y: &MarkedPointSet, nd: &NeighborData) -> bool {
    if y.len() < 2 {
        return true;
    }
    let centers: Vec<Vec<f64>> = y.points.iter().map(|p| p.center.clone()).collect();
    let list = CellList::new(&centers, bucket_size(y));
    (0..centers.len()).all(|i| {
        let di = nd.d[i];
        if !di.is_finite() {
            return true;
        }
        list.within(&centers, &centers[i], di).into_iter().all(|j| {
            j == i || dist2(&centers[i], &centers[j]).sqrt() >= 0.5 * (di + nd.d[j]) * (1.0 - 1e-12)
        })
    })
}

/// Every isolated point's `eps r`-ball misses the shield.
pub fn check_separation(s: &SieveRealization) -> bool {
    let eps = s.classification.scaling.eps;
    s.classification.isolated.iter().all(|p| {
        let x: Vec<f64> = p.center.iter().map(|c| c * eps).collect();
        s.shield
            .iter()
            .all(|b| dist2(&x, &b.center).sqrt() >= (eps * p.r + b.radius) * (1.0 - 1e-12))
    })
}

/// The three labels partition the points with `eps y' in domain`.
pub fn check_partition(y: &MarkedPointSet, c: &Classification) -> bool {
    let eps = c.scaling.eps;
    let n_inside = y
        .points
        .iter()
        .filter(|p| {
            let x: Vec<f64> = p.center.iter().map(|v| v * eps).collect();
            c.domain.contains(&x)
        })
        .count();
    let mut seen: Vec<usize> = c.all().map(|p| p.index).collect();
    seen.sort_unstable();
    let unique = seen.windows(2).all(|w| w[0] != w[1]);
    unique && seen.len() == n_inside
}

/// `thin(y, s1)` is contained in `thin(y, s2)` for `s1 <= s2`.
pub fn check_thinning_monotone(y: &MarkedPointSet, s1: f64, s2: f64) -> Result<bool> {
    let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
    let a = thin(y, lo)?;
    let b = thin(y, hi)?;
    Ok(a.points.iter().all(|p| b.points.contains(p)))
}
