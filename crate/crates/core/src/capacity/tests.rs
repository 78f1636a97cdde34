use std::f64::consts::PI;

use proptest::prelude::*;

use super::*;

fn coarse() -> GridSchedule {
    GridSchedule { h: 0.25, levels: 1, ..GridSchedule::default() }
}

fn disk() -> HoleSpec<f64> {
    HoleSpec::ball(1.0, 2).unwrap()
}

fn strip(l: f64, h: f64, sched: &GridSchedule) -> f64 {
    cap_strip(&disk(), l, h, sched).unwrap().value
}

#[test]
fn spherical_capacitor_matches_formula() {
    let p = AxisymProblem { dim: 3, outer: Outer::Ball { radius: 1.0 }, obstacle: Obstacle::Ball { radius: 0.25 } };
    let sched = GridSchedule { h: 1.0 / 32.0, levels: 3, ..GridSchedule::default() };
    let est = cap_classical(&p, &sched).unwrap();
    let exact = 4.0 * PI / (1.0 / 0.25 - 1.0);
    assert!((est.extrapolated - exact).abs() / exact < 0.01, "{} vs {exact}", est.extrapolated);
}

#[test]
fn annulus_capacities() {
    let l: f64 = 5.0;
    let two = cap_planar(&HoleSpec::ball(1.0, 2).unwrap(), l, &PlanarSchedule::default()).unwrap();
    let exact2 = 2.0 * PI / l.ln();
    assert!((two.extrapolated - exact2).abs() / exact2 < 0.01);
    let three = cap_planar(&HoleSpec::ball(1.0, 3).unwrap(), l, &PlanarSchedule::default()).unwrap();
    let exact3 = 4.0 * PI / (1.0 - 1.0 / l);
    assert!((three.extrapolated - exact3).abs() / exact3 < 0.01);
}

#[test]
fn strip_capacity_per_height_decreases_and_is_bracketed() {
    let l = 4.0;
    let sched = coarse();
    let hs = [0.25, 0.5, 1.0, 2.0, 4.0];
    let caps: Vec<f64> = hs.iter().map(|&h| strip(l, h, &sched)).collect();
    for k in 0..hs.len() - 1 {
        let (h1, h2) = (hs[k], hs[k + 1]);
        let (c1, c2) = (caps[k], caps[k + 1]);
        assert!(c1 / (2.0 * h1) > c2 / (2.0 * h2));
        assert!(h1 / h2 * c2 <= c1 * 1.01 && c1 <= h2 / h1 * c2 * 1.01);
    }
}

#[test]
fn strip_capacity_approaches_full_cylinder() {
    let l = 2.0;
    let sched = coarse();
    let hs = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0];
    let caps: Vec<f64> = hs.iter().map(|&h| strip(l, h, &sched)).collect();
    // once saturated the values differ only by grid noise
    assert!(caps.windows(2).all(|w| w[1] > w[0] * (1.0 - 1e-4)));
    assert!(caps[0] < caps[2] && caps[2] < caps[4]);
    let dirichlet = cap_cylinder(&disk(), l, 8.0 * l, &sched).unwrap().value;
    assert!((caps[4] - dirichlet).abs() / dirichlet < 0.02);
    for (&h, c) in hs.iter().zip(&caps) {
        assert!(*c <= cap_cylinder(&disk(), l, h, &sched).unwrap().value * (1.0 + 1e-9));
    }
}

#[test]
fn thin_strip_tends_to_planar_capacity() {
    let l = 4.0;
    let planar = cap_planar(&disk(), l, &PlanarSchedule::default()).unwrap().extrapolated;
    let sched = GridSchedule { h: 1.0 / 32.0, levels: 1, ..GridSchedule::default() };
    let ratio = |h: f64| strip(l, h, &sched) / (2.0 * h) / planar;
    // the quotient increases towards its limit as the strip gets thinner
    let (coarse, fine) = (ratio(1.0 / 8.0), ratio(1.0 / 16.0));
    assert!(coarse < fine && fine < 1.0 + 1e-3 && fine > 0.95, "{coarse} {fine}");
}

#[test]
fn dilation_scales_energy() {
    let base = AxisymProblem {
        dim: 3,
        outer: Outer::Cylinder { l: 1.0, h: 1.0, caps: CapBc::Neumann },
        obstacle: Obstacle::FlatDisk { radius: 0.25 },
    };
    let grid = AxisymGrid::graded(&base, &GridOptions::uniform(1.0 / 32.0)).unwrap();
    let opts = CgOptions::with_tol(1e-13);
    let e0 = solve_axisym(&base, &grid, &opts).unwrap().energy;
    for rho in [2.0f64, 4.0] {
        let p = AxisymProblem {
            dim: 3,
            outer: Outer::Cylinder { l: rho, h: rho, caps: CapBc::Neumann },
            obstacle: Obstacle::FlatDisk { radius: 0.25 * rho },
        };
        let e = solve_axisym(&p, &grid.scaled(rho), &opts).unwrap().energy;
        assert!((e / e0 - rho).abs() <= 1e-8 * rho, "rho {rho}: {}", e / e0);
    }
}

#[test]
fn cell_solvers_check_geometry() {
    assert!(CylinderSpec::new(1.0, 1.0, 2).is_err());
    assert!(CylinderSpec::new(-1.0, 1.0, 3).is_err());
    assert!(HoleSpec::ball(1.5, 2).is_err());
    assert!(cap_strip(&disk(), 0.5, 1.0, &coarse()).is_err());
    assert!(cap_planar(&disk(), 1.0, &PlanarSchedule::default()).is_err());
    let zero = GridSchedule { levels: 0, ..coarse() };
    assert!(cap_strip(&disk(), 2.0, 1.0, &zero).is_err());
}

#[test]
fn estimate_keeps_refinement_history() {
    let sched = GridSchedule { h: 0.5, levels: 3, ..GridSchedule::default() };
    let est = cap_cylinder(&disk(), 3.0, 3.0, &sched).unwrap();
    assert_eq!(est.values.len(), 3);
    assert!(est.spacings.windows(2).all(|w| (w[0] / w[1] - 2.0).abs() < 1e-12));
    assert_eq!(est.value, *est.values.last().unwrap());
    assert!(est.residual <= sched.cg_tol * 10.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn potentials_obey_max_principle(li in 8u32..17, hi in 2u32..17, neumann in any::<bool>()) {
        let (l, h) = (0.25 * li as f64, 0.25 * hi as f64);
        let cyl = CylinderSpec::new(l, h, 3).unwrap();
        let p = AxisymProblem {
            dim: 3,
            outer: Outer::Cylinder { l, h, caps: if neumann { CapBc::Neumann } else { CapBc::Dirichlet } },
            obstacle: Obstacle::FlatDisk { radius: 1.0 },
        };
        let grid = AxisymGrid::graded(&p, &coarse().grid_options(1.0)).unwrap();
        let sol = if neumann {
            solve_cell_mixed(&cyl, &disk(), &grid, &CgOptions::default()).unwrap()
        } else {
            solve_cell_dirichlet(&cyl, &disk(), &grid, &CgOptions::default()).unwrap()
        };
        prop_assert!(sol.max_principle_holds(1e-9));
        let (total, upper) = sol.energy_from_field();
        prop_assert!((total - sol.energy).abs() <= 1e-9 * sol.energy);
        // the cell problem is symmetric under z -> -z
        prop_assert!((2.0 * upper - total).abs() <= 1e-6 * total);
    }

    #[test]
    fn capacity_grows_with_height_and_shrinks_with_width(li in 8u32..13, hi in 2u32..9) {
        let (l, h) = (0.25 * li as f64, 0.25 * hi as f64);
        let sched = coarse();
        prop_assert!(strip(l, h, &sched) < strip(l, 2.0 * h, &sched));
        prop_assert!(strip(2.0 * l, h, &sched) < strip(l, h, &sched));
        prop_assert!(strip(l, h, &sched) < cap_cylinder(&disk(), l, h, &sched).unwrap().value);
    }
}

