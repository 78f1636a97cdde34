use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::effective::ScalingRule;
use crate::grid::Axis;
use crate::point_process::{
    classify, realize_sieve, sample_process, sampling_window, HoleShape, MarkLaw, MarkedPointSet, ProcessKind,
    ProcessSpec, SieveRealization, Window,
};

fn psi(x: f64, y: f64) -> f64 {
    (PI * x).sin() * (PI * y).sin()
}

fn realization(inv: f64, kind: ProcessKind, intensity: f64, seed: u64) -> SieveRealization {
    let rule = ScalingRule::new(3, 1.0 / inv, 1.0).unwrap();
    let sc = rule.sieve_scaling();
    let spec = ProcessSpec { kind, intensity, marks: MarkLaw::atom(1.0) };
    let domain = Window::unit(2);
    let y = sample_process(&spec, &sampling_window(&domain, &sc, 1.0), seed).unwrap();
    let c = classify(&y, &sc, &domain).unwrap();
    realize_sieve(&c, HoleShape::Ball { radius: 1.0 }).unwrap()
}

fn lattice(inv: f64) -> SieveRealization {
    realization(inv, ProcessKind::Lattice { offset: 0.5 }, 1.0, 1)
}

fn empty(inv: f64) -> SieveRealization {
    let sc = ScalingRule::new(3, 1.0 / inv, 1.0).unwrap().sieve_scaling();
    let domain = Window::unit(2);
    let y = MarkedPointSet::empty(sampling_window(&domain, &sc, 1.0), ProcessKind::Poisson, 0);
    let c = classify(&y, &sc, &domain).unwrap();
    realize_sieve(&c, HoleShape::Ball { radius: 1.0 }).unwrap()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn opts() -> DirectOptions {
    DirectOptions::default()
}

#[test]
fn slabs_decouple_without_holes() {
    let s = empty(4.0);
    let g = ThinGrid::build(&s, &ThinGridOptions::default()).unwrap();
    assert_eq!(g.hole_columns(), 0);
    let src = ThinSource::new(|x, y, _| psi(x, y), |_, _, _| 0.0);
    let sol = solve_direct(&g, &src, Reduction::Full, &opts()).unwrap();
    assert!(max_abs(&sol.field.lower) < 1e-12);
    // a z-independent load has a z-independent response
    let np = g.plane();
    let peak = max_abs(&sol.field.upper);
    for c in 0..np {
        let col: Vec<f64> = (0..g.nz()).map(|k| sol.field.upper[k * np + c]).collect();
        let spread = col.iter().cloned().fold(f64::MIN, f64::max) - col.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread <= 1e-7 * peak, "column {c} varies by {spread}");
    }
    assert!((peak * 2.0 * PI * PI - 1.0).abs() < 0.05);
}

#[test]
fn even_data_has_no_jump() {
    let s = lattice(4.0);
    let g = ThinGrid::build(&s, &ThinGridOptions::default()).unwrap();
    let src = ThinSource::new(|x, y, _| psi(x, y), |x, y, _| psi(x, y));
    let sol = solve_direct(&g, &src, Reduction::Full, &opts()).unwrap();
    let jump = jump_profile(&g, &sol.field);
    assert!(max_abs(&jump) <= 1e-7 * max_abs(&sol.field.upper));
    assert!(sol.field.is_continuous(&g, 0.0));
}

#[test]
fn energy_equals_load() {
    let s = lattice(4.0);
    let g = ThinGrid::build(&s, &ThinGridOptions::default()).unwrap();
    let src = ThinSource::odd(|x, y, z| psi(x, y) * (1.0 + z));
    for red in [Reduction::Full, Reduction::Odd] {
        let sol = solve_direct(&g, &src, red, &opts()).unwrap();
        assert!((sol.energy - sol.load).abs() <= 1e-8 * sol.energy, "{red:?}");
        let (eu, el) = slab_energies(&g, &sol.field);
        assert!((eu + el - sol.energy).abs() <= 1e-9 * sol.energy, "{red:?}");
    }
}

#[test]
fn operator_is_symmetric() {
    let s = lattice(4.0);
    let g = ThinGrid::build(&s, &ThinGridOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (red, n) in [(Reduction::Full, 2 * g.slab_len()), (Reduction::Odd, g.slab_len())] {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ax = apply_operator(&g, red, &x);
        let ay = apply_operator(&g, red, &y);
        let xay: f64 = x.iter().zip(&ay).map(|(a, b)| a * b).sum();
        let yax: f64 = y.iter().zip(&ax).map(|(a, b)| a * b).sum();
        let scale: f64 = x.iter().zip(&ax).map(|(a, b)| (a * b).abs()).sum();
        assert!((xay - yax).abs() <= 1e-12 * scale, "{red:?}: {xay} vs {yax}");
    }
}

#[test]
fn odd_source_gives_odd_solution_and_reductions_agree() {
    let s = lattice(8.0);
    let g = ThinGrid::build(&s, &ThinGridOptions::default()).unwrap();
    let src = ThinSource::odd(|x, y, _| psi(x, y));
    let full = solve_direct(&g, &src, Reduction::Full, &opts()).unwrap();
    let odd = solve_direct(&g, &src, Reduction::Odd, &opts()).unwrap();
    let peak = max_abs(&full.field.upper);
    let sym: Vec<f64> = full.field.upper.iter().zip(&full.field.lower).map(|(u, l)| u + l).collect();
    assert!(max_abs(&sym) <= 1e-7 * peak);
    let diff: Vec<f64> = full.field.upper.iter().zip(&odd.field.upper).map(|(a, b)| a - b).collect();
    assert!(max_abs(&diff) <= 1e-7 * peak);
    assert!((full.energy - odd.energy).abs() <= 1e-8 * full.energy);
    assert!(odd.unknowns * 2 == full.unknowns);
}

fn faces(a: &Axis<f64>) -> Vec<f64> {
    let mut f = vec![a.dual_bounds(0).0];
    f.extend((0..a.len()).map(|i| a.dual_bounds(i).1));
    f
}

fn mirrored(a: &Axis<f64>) -> Axis<f64> {
    let mut f = faces(a);
    let tail: Vec<f64> = f.iter().rev().skip(1).map(|x| 1.0 - x).collect();
    f.extend(tail);
    Axis::cells(f).unwrap()
}

#[test]
fn quarter_reduction_matches_mirrored_full_grid() {
    let s = lattice(8.0);
    let q = ThinGrid::build_quarter(&s, &ThinGridOptions::default()).unwrap();
    assert_eq!(q.copies(), 4.0);
    let full = ThinGrid::from_axes(&s, mirrored(&q.x), mirrored(&q.y), q.z.clone(), 2).unwrap();
    assert_eq!(full.hole_columns(), 4 * q.hole_columns());
    let src = ThinSource::odd(|x, y, _| psi(x, y));
    let a = solve_direct(&q, &src, Reduction::Odd, &opts()).unwrap();
    let b = solve_direct(&full, &src, Reduction::Odd, &opts()).unwrap();
    assert!((a.energy - b.energy).abs() <= 1e-8 * b.energy, "{} vs {}", a.energy, b.energy);
    let (ja, jb) = (jump_profile(&q, &a.field), jump_profile(&full, &b.field));
    let peak = max_abs(&jb);
    for j in 0..q.ny() {
        for i in 0..q.nx() {
            assert!((ja[j * q.nx() + i] - jb[j * full.nx() + i]).abs() <= 1e-7 * peak);
            let (mi, mj) = (full.nx() - 1 - i, full.ny() - 1 - j);
            assert!((ja[j * q.nx() + i] - jb[mj * full.nx() + mi]).abs() <= 1e-7 * peak);
        }
    }
    let reference = |x: f64, y: f64| psi(x, y);
    let (da, na) = compare_profile(&q, &ja, reference);
    let (db, nb) = compare_profile(&full, &jb, reference);
    assert!((na - nb).abs() <= 1e-3 * nb);
    assert!((da / na - db / nb).abs() <= 1e-3 * (db / nb));
    let (pa, _) = source_norms(&q, &src);
    let (pb, _) = source_norms(&full, &src);
    assert!((pa - pb).abs() <= 1e-3 * pb);
}

#[test]
fn quarter_needs_symmetric_holes() {
    let s = realization(4.0, ProcessKind::Poisson, 2.0, 3);
    assert!(ThinGrid::build_quarter(&s, &ThinGridOptions::default()).is_err());
}

#[test]
fn slab_averages_of_simple_fields() {
    let s = lattice(4.0);
    let g = ThinGrid::build(&s, &ThinGridOptions::default()).unwrap();
    let np = g.plane();
    let mut f = SieveField::zeros(&g);
    for k in 0..g.nz() {
        for c in 0..np {
            f.upper[k * np + c] = 1.0;
            f.lower[k * np + c] = g.z.node(k);
        }
    }
    let (p, m) = slab_averages(&g, &f);
    assert!(p.iter().all(|v| (v - 1.0).abs() < 1e-12));
    assert!(m.iter().all(|v| (v - 0.5 * g.delta).abs() < 1e-12 * g.delta));
    let r = rescale(&g, &f);
    assert_eq!(r.zhat.first().copied(), Some(0.0));
    assert!((r.zhat.last().unwrap() - 1.0).abs() < 1e-12);
    let (eu, el) = slab_energies(&g, &f);
    assert!((r.energy - (eu + el) / g.delta).abs() <= 1e-12 * r.energy);
}

#[test]
fn rescaled_energy_respects_bound() {
    let s = lattice(8.0);
    let g = ThinGrid::build(&s, &ThinGridOptions::default()).unwrap();
    let src = ThinSource::odd(|x, y, _| psi(x, y));
    let sol = solve_direct(&g, &src, Reduction::Odd, &opts()).unwrap();
    let r = rescale(&g, &sol.field);
    assert!(r.energy > 0.0 && r.energy <= a_priori_bound(&g, &src));
}

#[test]
fn discrete_poincare_constant() {
    use super::rescale::axis_eigenvalue;
    let pi2 = PI * PI;
    let gaps: Vec<f64> = [16, 32, 64]
        .iter()
        .map(|&n| {
            let a = Axis::cells_uniform(0.0, 1.0, n);
            let lam = axis_eigenvalue(&a, false);
            // the sampled sine bounds the minimum from above
            let c = super::solver::inv_gaps(&a, false);
            let v: Vec<f64> = a.nodes().iter().map(|x| (PI * x).sin()).collect();
            let mut k = c[0] * v[0] * v[0] + c[n] * v[n - 1] * v[n - 1];
            for i in 0..n - 1 {
                k += c[i + 1] * (v[i + 1] - v[i]).powi(2);
            }
            let m: f64 = (0..n).map(|i| a.dual(i) * v[i] * v[i]).sum();
            assert!(lam <= k / m * (1.0 + 1e-12) && lam < pi2);
            let half = axis_eigenvalue(&Axis::cells_uniform(0.0, 0.5, n / 2), true);
            assert!((half - lam).abs() < 1e-9 * lam);
            pi2 - lam
        })
        .collect();
    assert!(gaps[0] / gaps[1] > 3.9 && gaps[1] / gaps[2] > 3.9, "{gaps:?}");
}

#[test]
fn bound_holds_without_holes() {
    let s = empty(8.0);
    let g = ThinGrid::build(&s, &ThinGridOptions::default()).unwrap();
    let src = ThinSource::new(|x, y, _| psi(x, y), |x, y, _| 0.5 * psi(x, y));
    let sol = solve_direct(&g, &src, Reduction::Full, &opts()).unwrap();
    // both slabs sit on their first mode, so the bound is sharp up to the
    // solver tolerance
    let r = rescale(&g, &sol.field).energy / a_priori_bound(&g, &src);
    assert!(r <= 1.0 + 1e-9 && r > 0.99, "{r}");
}

#[test]
fn too_coarse_grid_is_rejected() {
    let s = lattice(4.0);
    let x = Axis::cells((0..=8).map(|i| i as f64 / 8.0).collect()).unwrap();
    let z = Axis::vertex_uniform(0.0, s.scaling().delta, 4);
    match ThinGrid::from_axes(&s, x.clone(), x, z, 4) {
        Err(crate::SieveError::UnresolvedHoles { regions, .. }) => assert_eq!(regions.len(), s.contact_regions.len()),
        other => panic!("expected unresolved holes, got {other:?}"),
    }
}

fn field(inv: f64) -> TestFunctionField {
    let s = lattice(inv);
    let cache = CellPotentialCache::new(1.0, CellOptions::default());
    build_w(&s, &cache).unwrap()
}

#[test]
fn empty_sieve_gives_constant_test_function() {
    let s = empty(4.0);
    let w = build_w(&s, &CellPotentialCache::new(1.0, CellOptions::default())).unwrap();
    assert_eq!(w.value(0.3, 0.7, 0.01), 1.0);
    assert_eq!(w.energy_profile(|_, _| 1.0), 0.0);
    assert_eq!(w.bilinear_limit(|x, y, _, wv| wv * psi(x, y)).unwrap(), 0.0);
}

#[test]
fn test_function_vanishes_on_holes_and_is_one_between_cells() {
    let inv = 4.0;
    let w = field(inv);
    assert_eq!(w.cells.len(), (inv * inv) as usize);
    let c = w.cells[0].center;
    assert!(w.value(c[0], c[1], 0.0).abs() < 1e-9);
    assert!(matches!(w.region_at(c[0], c[1], 0.0), Region::IsolatedBall(0)));
    // lattice corners lie outside every cell cylinder
    assert_eq!(w.region_at(0.5, 0.5, 0.1 * w.delta), Region::Ambient);
    assert_eq!(w.value(0.5, 0.5, 0.1 * w.delta), 1.0);
}

#[test]
fn energy_profile_adds_up_cells() {
    let w = field(4.0);
    let total: f64 = w.cell_energies().iter().sum::<f64>() + w.shield_energies().iter().sum::<f64>();
    let e = w.energy_profile(|_, _| 1.0);
    assert!((e - total).abs() <= 1e-9 * total);
    // every lattice cell carries the same energy
    let c = w.cell_energies();
    assert!(c.iter().all(|v| (v - c[0]).abs() <= 1e-12 * c[0]));
    // a weight supported away from the points sees nothing
    let far = w.energy_profile(|x, y| if x > 2.0 || y > 2.0 { 1.0 } else { 0.0 });
    assert_eq!(far, 0.0);
    let half = w.energy_profile(|x, _| if x < 0.5 { 1.0 } else { 0.0 });
    assert!((half - 0.5 * e).abs() <= 1e-9 * e);
}

#[test]
fn bilinear_limit_checks_admissibility() {
    let w = field(4.0);
    assert_eq!(w.bilinear_limit(|_, _, _, _| 0.0).unwrap(), 0.0);
    let e = w.energy_profile(|_, _| 1.0);
    let b = w.bilinear_limit(|_, _, _, wv| wv).unwrap();
    assert!((b - e).abs() <= 0.05 * e, "{b} vs {e}");
    assert!(matches!(w.bilinear_limit(|_, _, _, _| 1.0), Err(crate::SieveError::NotAdmissible { .. })));
}

#[test]
fn sieve_field_of_test_function_is_admissible() {
    let s = lattice(4.0);
    let w = build_w(&s, &CellPotentialCache::new(1.0, CellOptions::default())).unwrap();
    let g = ThinGrid::build(&s, &ThinGridOptions::default()).unwrap();
    let (f, regions) = w.to_sieve_field(&g);
    assert_eq!(regions.len(), g.slab_len());
    assert!(f.is_continuous(&g, 0.0));
    for c in (0..g.plane()).filter(|&c| g.hole[c]) {
        assert_eq!(f.upper[c], 0.0);
    }
    assert!(f.upper.iter().zip(&f.lower).all(|(u, l)| *u == -*l));
}

#[test]
fn poisson_test_function_builds_with_shields() {
    let s = realization(4.0, ProcessKind::Poisson, 4.0, 11);
    let w = build_w(&s, &CellPotentialCache::new(1.0, CellOptions::default())).unwrap();
    assert_eq!(w.shields.len() > 0, s.cluster_regions().count() > 0);
    for e in w.shield_energies() {
        assert!(e.is_finite() && e >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn test_function_stays_in_unit_interval(x in 0.0f64..1.0, y in 0.0f64..1.0, t in -1.0f64..1.0) {
        thread_local! {
            static W: TestFunctionField = field(4.0);
        }
        W.with(|w| {
            let v = w.value(x, y, t * w.delta);
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v), "w = {}", v);
            Ok(())
        })?;
    }
}
