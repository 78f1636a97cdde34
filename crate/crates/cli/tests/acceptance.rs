//! Acceptance suite: one pass/fail line per criterion. Runs as a plain
//! binary (`harness = false`) and exits nonzero if any criterion fails.

use std::f64::consts::PI;
use std::time::Instant;

use sieve_cli::config::{
    CapacityConfig, CapacityKind, ClassifyConfig, ConvergenceConfig, ExperimentConfig, GammaConfig, Study,
    TfEnergyConfig,
};
use sieve_cli::record::ResultRecord;
use sieve_cli::studies::run;
use sieve_core::capacity::{
    cap_cylinder, cap_strip, eval_j, solve_axisym, AxisymGrid, AxisymProblem, CapBc, GridOptions, GridSchedule,
    HoleSpec, JSchedule, Obstacle, Outer,
};
use sieve_core::effective::{H0Tag, ScalingRule};
use sieve_core::homogenized::{l2_norm, solve_coupled, GridU, SourcePair};
use sieve_core::linalg::CgOptions;
use sieve_core::point_process::{
    check_disjoint_balls, check_partition, check_separation, check_thinning_monotone, classify, neighbor_data,
    realize_sieve, sample_process, sampling_window, HoleShape, MarkLaw, ProcessKind, ProcessSpec, Window,
};

type Verdict = Result<(bool, String), String>;

fn study(study: Study) -> std::result::Result<ResultRecord, String> {
    run(&ExperimentConfig { seed: 20_240_901, study }).map_err(|e| e.to_string())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn metric(r: &ResultRecord, label: &str) -> std::result::Result<f64, String> {
    r.get(label).ok_or_else(|| format!("missing metric `{label}`"))
}

fn column(r: &ResultRecord, table: &str, col: &str) -> std::result::Result<Vec<f64>, String> {
    r.table(table).and_then(|t| t.column(col)).ok_or_else(|| format!("missing column {table}.{col}"))
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn disk() -> HoleSpec<f64> {
    HoleSpec::ball(1.0, 2).unwrap()
}

fn spherical_capacitor() -> Verdict {
    let t = Instant::now();
    let c = CapacityConfig {
        kind: CapacityKind::Classical,
        n_dim: 3,
        rho: 0.25,
        l: 1.0,
        grid: GridSchedule { h: 1.0 / 32.0, levels: 3, ..GridSchedule::default() },
        ..CapacityConfig::default()
    };
    let r = study(Study::Capacity(c))?;
    let v = metric(&r, "capacity of the ball in the ball")?;
    let exact = 4.0 * PI / 3.0;
    let (e, s) = (rel(v, exact), t.elapsed().as_secs_f64());
    Ok((e <= 0.01 && s < 60.0, format!("{v:.6} vs 4π/3 = {exact:.6}, rel {e:.2e} (tol 1e-2), {s:.1} s (limit 60)")))
}

fn flat_disk() -> Verdict {
    let t = Instant::now();
    let j = eval_j(H0Tag::Infinite, 1.0, &disk(), &JSchedule::default()).map_err(|e| e.to_string())?;
    let (e, s) = (rel(j, 8.0), t.elapsed().as_secs_f64());
    Ok((e <= 0.03 && s < 300.0, format!("J(1) = {j:.5} vs 8, rel {e:.2e} (tol 3e-2), {s:.1} s (limit 300)")))
}

fn annulus() -> Verdict {
    let (l, rho) = (5.0f64, 1.0f64);
    let mut ok = true;
    let mut parts = Vec::new();
    for (n, exact) in [(3, 2.0 * PI / (l / rho).ln()), (4, 4.0 * PI / (1.0 / rho - 1.0 / l))] {
        let t = Instant::now();
        let c = CapacityConfig { kind: CapacityKind::Planar, n_dim: n, rho, l, ..CapacityConfig::default() };
        let r = study(Study::Capacity(c))?;
        let v = metric(&r, "Cap_0 of the ball in the planar ball")?;
        let (e, s) = (rel(v, exact), t.elapsed().as_secs_f64());
        ok &= e <= 0.01 && s < 30.0;
        parts.push(format!("d={} {v:.5} vs {exact:.5} rel {e:.2e} in {s:.1} s", n - 1));
    }
    Ok((ok, format!("{} (tol 1e-2, limit 30 s each)", parts.join("; "))))
}

fn strip_monotone() -> Verdict {
    let c = CapacityConfig {
        kind: CapacityKind::Strip,
        n_dim: 3,
        rho: 1.0,
        l: 4.0,
        h: vec![0.25, 0.5, 1.0, 2.0, 4.0],
        grid: GridSchedule { h: 0.25, levels: 1, ..GridSchedule::default() },
        ..CapacityConfig::default()
    };
    let r = study(Study::Capacity(c))?;
    let hs = column(&r, "heights", "h")?;
    let caps = column(&r, "heights", "cap_strip")?;
    let per: Vec<f64> = caps.iter().zip(&hs).map(|(c, h)| c / (2.0 * h)).collect();
    let mut worst: f64 = 0.0;
    for i in 0..hs.len() {
        for j in i + 1..hs.len() {
            let (h1, h2, c1, c2) = (hs[i], hs[j], caps[i], caps[j]);
            worst = worst.max((h1 / h2 * c2 - c1) / c1).max((c1 - h2 / h1 * c2) / c1);
        }
    }
    let dec = strictly_decreasing(&per);
    Ok((dec && worst <= 0.01, format!("Cap_h/2h = {per:.4?} strictly decreasing: {dec}; worst bracket violation {worst:.2e} (slack 1e-2)")))
}

fn strip_limit() -> Verdict {
    let l = 2.0;
    let sched = GridSchedule { h: 0.25, levels: 1, ..GridSchedule::default() };
    let hs = [l, 2.0 * l, 4.0 * l, 8.0 * l];
    let caps: Vec<f64> = hs
        .iter()
        .map(|&h| cap_strip(&disk(), l, h, &sched).map(|e| e.value))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let dirichlet = cap_cylinder(&disk(), l, 16.0 * l, &sched).map_err(|e| e.to_string())?.value;
    // saturated values differ only by solver noise
    let noise = 1e-4;
    let inc = caps.windows(2).all(|w| w[1] >= w[0] * (1.0 - noise)) && caps[0] < caps[3];
    let e = rel(caps[3], dirichlet);
    Ok((inc && e <= 0.02, format!("Cap_h at h = l..8l {caps:.6?} increasing (noise 1e-4): {inc}; vs Dirichlet {dirichlet:.6} rel {e:.2e} (tol 2e-2)")))
}

fn scaling_identity() -> Verdict {
    let opts = CgOptions::with_tol(1e-13);
    let mut worst: f64 = 0.0;
    for n in [3usize, 4] {
        let problem = |s: f64| AxisymProblem {
            dim: n,
            outer: Outer::Cylinder { l: s, h: s, caps: CapBc::Neumann },
            obstacle: Obstacle::FlatDisk { radius: 0.25 * s },
        };
        let base = problem(1.0);
        let grid = AxisymGrid::graded(&base, &GridOptions::uniform(1.0 / 32.0)).map_err(|e| e.to_string())?;
        let e0 = solve_axisym(&base, &grid, &opts).map_err(|e| e.to_string())?.energy;
        for rho in [2.0f64, 4.0] {
            let e = solve_axisym(&problem(rho), &grid.scaled(rho), &opts).map_err(|e| e.to_string())?.energy;
            worst = worst.max(rel(e / e0, rho.powi(n as i32 - 2)));
        }
    }
    Ok((worst <= 1e-8, format!("worst relative deviation from rho^(N-2), N in {{3, 4}}, rho in {{2, 4}}: {worst:.2e} (tol 1e-8)")))
}

fn gamma_estimation() -> Verdict {
    let t = Instant::now();
    let lattice = GammaConfig {
        process: ProcessSpec { kind: ProcessKind::Lattice { offset: 0.5 }, intensity: 1.0, marks: MarkLaw::atom(1.0) },
        seeds: 2,
        ..GammaConfig::default()
    };
    let r = study(Study::Gamma(lattice))?;
    let half_j = 0.5 * metric(&r, "J at unit mark")?;
    let means = column(&r, "per_eps", "mean")?;
    let worst = means.iter().map(|m| rel(*m, half_j)).fold(0.0, f64::max);
    let poisson = GammaConfig {
        process: ProcessSpec { kind: ProcessKind::Poisson, intensity: 2.0, marks: MarkLaw::atom(1.0) },
        eps: vec![1.0 / 64.0],
        seeds: 100,
        ..GammaConfig::default()
    };
    let r = study(Study::Gamma(poisson))?;
    let (m, se, a) = (
        metric(&r, "gamma, empirical at smallest eps")?,
        metric(&r, "gamma, standard error at smallest eps")?,
        metric(&r, "gamma, analytic half mean of J")?,
    );
    let z = (m - a).abs() / se;
    let s = t.elapsed().as_secs_f64();
    Ok((
        worst <= 1e-12 && z <= 3.0 && s < 600.0,
        format!("lattice vs J(1)/2 worst rel {worst:.1e}; Poisson eps=1/64, 100 seeds: {m:.4} ± {se:.4} vs {a:.4}, |z| = {z:.2} (≤ 3); {s:.1} s (limit 600)"),
    ))
}

fn cluster_negligibility() -> Verdict {
    let c = ClassifyConfig { seeds: 1000, ..ClassifyConfig::default() };
    let r = study(Study::Classify(c))?;
    let mut ok = true;
    let mut parts = Vec::new();
    for col in ["sum_j", "sum_vol", "shield_measure"] {
        let v = column(&r, "clusters", col)?;
        let ratio = v.last().unwrap() / v[0];
        let dec = strictly_decreasing(&v);
        ok &= dec && ratio < 0.1;
        parts.push(format!("{col} decreasing {dec}, last/first {ratio:.2e}"));
    }
    Ok((ok, format!("{} (ratio < 0.1), 1000 seeds per eps", parts.join("; "))))
}

fn tf_energy() -> std::result::Result<ResultRecord, String> {
    study(Study::TfEnergy(TfEnergyConfig::default()))
}

fn toward(values: &[f64], target: f64) -> bool {
    let errs: Vec<f64> = values.iter().map(|v| (v - target).abs()).collect();
    errs.windows(2).all(|w| w[1] <= w[0])
}

fn oscillating_energy(r: &ResultRecord, seconds: f64) -> Verdict {
    let target = metric(r, "energy target gamma |U'|")?;
    let e = column(r, "per_eps", "energy")?;
    let eps = column(r, "per_eps", "eps")?;
    if eps.len() != 3 {
        return Ok((false, format!("only {} of 3 scales ran: {:?}", eps.len(), r.omissions)));
    }
    let err = rel(*e.last().unwrap(), target);
    let mono = toward(&e, target);
    Ok((
        err <= 0.1 && mono && seconds < 1200.0,
        format!("energies {e:.5?} vs gamma|U'| = {target:.5}; rel {err:.2e} at 1/32 (tol 0.1); monotone approach {mono}; {seconds:.0} s (limit 1200)"),
    ))
}

fn bilinear(r: &ResultRecord) -> Verdict {
    let target = metric(r, "bilinear target gamma times the integral of psi")?;
    let b = column(r, "per_eps", "bilinear")?;
    let err = rel(*b.last().ok_or("no rows")?, target);
    Ok((err <= 0.1, format!("values {b:.5?} vs gamma∫psi = {target:.5}; rel {err:.2e} at 1/32 (tol 0.1)")))
}

fn homogenized_solver() -> Verdict {
    let psi = |x: &[f64]| (PI * x[0]).sin() * (PI * x[1]).sin();
    let bump = |x: &[f64]| 16.0 * x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]);
    let neg_lap_bump = |x: &[f64]| 32.0 * (x[0] * (1.0 - x[0]) + x[1] * (1.0 - x[1]));
    let gamma = 3.0;
    let opts = CgOptions::with_tol(1e-13);
    let mut errs = Vec::new();
    for n in [16, 32, 64] {
        let g = GridU::new(2, n).map_err(|e| e.to_string())?;
        let src = SourcePair::from_fns(
            &g,
            |x| 2.0 * PI * PI * psi(x) + 0.5 * gamma * (psi(x) - bump(x)),
            |x| neg_lap_bump(x) - 0.5 * gamma * (psi(x) - bump(x)),
        );
        let s = solve_coupled(gamma, &src, &g, &opts).map_err(|e| e.to_string())?;
        let d: Vec<f64> = (0..g.num_nodes())
            .flat_map(|k| {
                let x = g.coords(k);
                [s.u_plus[k] - psi(&x), s.u_minus[k] - bump(&x)]
            })
            .collect();
        errs.push(l2_norm(&g, &d));
    }
    let order = (errs[1] / errs[2]).log2();

    let g = GridU::new(2, 64).map_err(|e| e.to_string())?;
    let same = SourcePair::from_fns(&g, psi, psi);
    let s = solve_coupled(5.0, &same, &g, &opts).map_err(|e| e.to_string())?;
    let jump = s.jump().iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let odd = SourcePair::from_fns(&g, psi, |x| -psi(x));
    let gammas = [0.0, 1.0, 4.0, 16.0, 64.0];
    let jumps: Vec<f64> = gammas
        .iter()
        .map(|&gm| solve_coupled(gm, &odd, &g, &opts).map(|s| l2_norm(&g, &s.jump())))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let dec = strictly_decreasing(&jumps);
    Ok((
        order >= 1.9 && jump <= 1e-9 && dec,
        format!("order {order:.3} (≥ 1.9); equal-source max jump {jump:.1e} (≤ 1e-9); antisymmetric jump over gamma {gammas:?} strictly decreasing: {dec}"),
    ))
}

fn direct_vs_homogenized() -> Verdict {
    let t = Instant::now();
    let r = study(Study::Convergence(ConvergenceConfig::default()))?;
    let d = column(&r, "per_eps", "jump_rel_l2")?;
    let s = t.elapsed().as_secs_f64();
    if d.len() != 3 {
        return Ok((false, format!("only {} of 3 scales ran: {:?}", d.len(), r.omissions)));
    }
    let checks = r.all_passed();
    let dec = strictly_decreasing(&d);
    let last = d[2];
    Ok((
        dec && last <= 0.15 && s < 7200.0 && checks,
        format!("relative L2 jump discrepancy at eps = 1/8, 1/16, 1/32: {d:?}; decreasing {dec}; {:.2}% at 1/32 (tol 15%); energy/bound checks {checks}; {s:.0} s (limit 7200)", 100.0 * last),
    ))
}

fn realization_invariants() -> Verdict {
    let kinds = [
        ProcessKind::Poisson,
        ProcessKind::Lattice { offset: 0.5 },
        ProcessKind::PerturbedLattice,
        ProcessKind::MaternHardcore { radius: 0.4 },
    ];
    let marks = MarkLaw::Discrete { atoms: vec![(0.5, 1.0), (2.0, 1.0)] };
    let domain = Window::unit(2);
    let (mut runs, mut failed) = (0, Vec::new());
    for (ki, kind) in kinds.iter().enumerate() {
        let spec = ProcessSpec { kind: kind.clone(), intensity: 2.0, marks: marks.clone() };
        for s in 0..250u64 {
            let inv = [4.0, 8.0, 16.0][(s % 3) as usize];
            let sc = ScalingRule::new(3, 1.0 / inv, 1.0).map_err(|e| e.to_string())?.sieve_scaling();
            let seed = 1_000 * ki as u64 + s;
            let y = sample_process(&spec, &sampling_window(&domain, &sc, 2.0), seed).map_err(|e| e.to_string())?;
            let c = classify(&y, &sc, &domain).map_err(|e| e.to_string())?;
            let real = realize_sieve(&c, HoleShape::Ball { radius: 1.0 }).map_err(|e| e.to_string())?;
            let ok = check_disjoint_balls(&y, &neighbor_data(&y))
                && check_partition(&y, &c)
                && check_separation(&real)
                && check_thinning_monotone(&y, 0.2, 0.6).map_err(|e| e.to_string())?;
            runs += 1;
            if !ok {
                failed.push((kind.tag(), seed));
            }
        }
    }
    Ok((failed.is_empty(), format!("{} of {runs} realizations over 4 process kinds satisfy all invariants; failures {failed:?}", runs - failed.len())))
}

fn main() {
    let mut pass = 0;
    let mut lines = Vec::new();
    let mut report = |id: usize, name: &str, v: Verdict| {
        let (ok, detail) = v.unwrap_or_else(|e| (false, format!("error: {e}")));
        pass += ok as usize;
        let line = format!("{} {id:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        println!("{line}");
        lines.push(line);
    };
    report(1, "spherical capacitor", spherical_capacitor());
    report(2, "flat disk J", flat_disk());
    report(3, "planar annulus capacities", annulus());
    report(4, "strip capacity monotonicity and bracketing", strip_monotone());
    report(5, "strip capacity tends to the Dirichlet cylinder", strip_limit());
    report(6, "dilation scaling", scaling_identity());
    report(7, "gamma estimation", gamma_estimation());
    report(8, "cluster negligibility", cluster_negligibility());
    let t = Instant::now();
    let tf = tf_energy();
    let secs = t.elapsed().as_secs_f64();
    report(9, "oscillating test function energy", tf.as_ref().map_err(|e| e.clone()).and_then(|r| oscillating_energy(r, secs)));
    report(10, "bilinear limit", tf.as_ref().map_err(|e| e.clone()).and_then(bilinear));
    report(11, "homogenized solver", homogenized_solver());
    report(12, "direct against homogenized", direct_vs_homogenized());
    report(13, "realization invariants", realization_invariants());
    println!("acceptance: {pass} of 13 criteria passed");
    if pass != 13 {
        std::process::exit(1);
    }
}
