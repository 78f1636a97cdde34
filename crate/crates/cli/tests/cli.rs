use std::process::Command;

use sieve_cli::config::{
    ClassifyConfig, ConvergenceConfig, DirectConfig, ExperimentConfig, GammaConfig, HomogConfig, Study,
};
use sieve_cli::record::ResultRecord;
use sieve_cli::studies::run;
use sieve_core::point_process::{MarkLaw, ProcessKind, ProcessSpec};
use sieve_core::sieve_direct::ThinGridOptions;

fn cfg(seed: u64, study: Study) -> ExperimentConfig {
    ExperimentConfig { seed, study }
}

fn without_runtime(mut r: ResultRecord) -> ResultRecord {
    r.provenance.runtime_seconds = 0.0;
    for t in &mut r.tables {
        if let Some(k) = t.columns.iter().position(|c| c == "seconds") {
            for row in &mut t.rows {
                row[k] = 0.0;
            }
        }
    }
    r
}

fn small_convergence() -> ConvergenceConfig {
    ConvergenceConfig {
        eps: vec![0.25, 0.125],
        grid: ThinGridOptions::default(),
        homog_n: 64,
        ..ConvergenceConfig::default()
    }
}

#[test]
fn reruns_reproduce_records() {
    let configs = [
        cfg(7, Study::Gamma(GammaConfig { eps: vec![0.25, 0.125], seeds: 8, ..GammaConfig::default() })),
        cfg(7, Study::Classify(ClassifyConfig { eps: vec![0.25, 0.125], seeds: 6, ..ClassifyConfig::default() })),
        cfg(3, Study::Convergence(small_convergence())),
    ];
    for c in &configs {
        let a = without_runtime(run(c).unwrap());
        let b = without_runtime(run(c).unwrap());
        assert_eq!(a, b, "{}", c.study.name());
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}

#[test]
fn seeds_change_random_studies() {
    let g = |seed| {
        let c = cfg(seed, Study::Gamma(GammaConfig { eps: vec![0.25], seeds: 4, ..GammaConfig::default() }));
        run(&c).unwrap().get("gamma, empirical at smallest eps").unwrap()
    };
    assert_ne!(g(1), g(2));
}

#[test]
fn no_holes_control_matches_zero_coupling() {
    let c = ConvergenceConfig { process: None, ..small_convergence() };
    let r = run(&cfg(0, Study::Convergence(c))).unwrap();
    assert!(r.all_passed(), "{:?}", r.checks);
    assert_eq!(r.get("gamma used by the limit problem"), Some(0.0));
    let e = r.table("per_eps").unwrap().column("jump_rel_l2").unwrap();
    // second-order agreement: the error drops about fourfold per halving
    assert!(e[1] < 2e-3 && e[0] / e[1] > 3.0, "{e:?}");
}

#[test]
fn doubling_the_source_doubles_the_solution() {
    let base = DirectConfig { eps: 0.25, grid: ThinGridOptions::default(), ..DirectConfig::default() };
    let twice = DirectConfig {
        f_plus: format!("2*({})", base.f_plus),
        f_minus: format!("2*({})", base.f_minus),
        ..base.clone()
    };
    let a = run(&cfg(0, Study::SolveDirect(base))).unwrap();
    let b = run(&cfg(0, Study::SolveDirect(twice))).unwrap();
    let ja = a.get("L2 norm of the slab-averaged jump").unwrap();
    let jb = b.get("L2 norm of the slab-averaged jump").unwrap();
    assert!((jb / ja - 2.0).abs() < 1e-8);
    let ea = a.get("energy over both slabs").unwrap();
    let eb = b.get("energy over both slabs").unwrap();
    assert!((eb / ea - 4.0).abs() < 1e-8);
}

#[test]
fn homogenized_study_flags_equal_sources() {
    let h = HomogConfig { n: 32, f_minus: HomogConfig::default().f_plus, export_fields: true, ..HomogConfig::default() };
    let r = run(&cfg(0, Study::SolveHomog(h))).unwrap();
    assert_eq!(r.checks.len(), 1);
    assert!(r.all_passed());
    assert_eq!(r.exports[0].rows.len(), 33 * 33);
}

#[test]
fn bad_odd_request_is_a_config_error() {
    let d = DirectConfig {
        eps: 0.25,
        f_minus: "1".into(),
        reduction: sieve_cli::config::ReductionChoice::Odd,
        ..DirectConfig::default()
    };
    assert!(run(&cfg(0, Study::SolveDirect(d))).is_err());
}

#[test]
fn records_and_tables_are_written() {
    let dir = std::env::temp_dir().join(format!("sieve-cli-write-{}", std::process::id()));
    let c = cfg(0, Study::Regimes(Default::default()));
    let files = run(&c).unwrap().write(&dir).unwrap();
    assert_eq!(files.len(), 2);
    let back: ResultRecord = serde_json::from_str(&std::fs::read_to_string(&files[0]).unwrap()).unwrap();
    assert_eq!(back.study, "regimes");
    let csv = std::fs::read_to_string(&files[1]).unwrap();
    assert!(csv.starts_with("N,p,regime,a,delta,h_eps"));
    assert_eq!(csv.lines().count(), 1 + 15);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn lattice_gamma_is_exact() {
    let spec = ProcessSpec { kind: ProcessKind::Lattice { offset: 0.5 }, intensity: 1.0, marks: MarkLaw::atom(1.0) };
    let g = GammaConfig { process: spec, eps: vec![0.125], seeds: 2, ..GammaConfig::default() };
    let r = run(&cfg(0, Study::Gamma(g))).unwrap();
    assert!(r.all_passed(), "{:?}", r.checks);
}

fn sieve() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sieve"))
}

#[test]
fn binary_exit_codes() {
    let dir = std::env::temp_dir().join(format!("sieve-cli-bin-{}", std::process::id()));
    let ok = sieve().args(["regimes", "--out-dir"]).arg(&dir).output().unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(dir.join("regimes.json").exists());

    // a failing invariant: the classical capacity on a grid too coarse for 1%
    let coarse = sieve()
        .args(["capacity", "--kind", "classical", "--rho", "0.25", "--l", "1", "--dx", "1", "--out-dir"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(coarse.status.code(), Some(1), "{}", String::from_utf8_lossy(&coarse.stdout));

    let bad = sieve().args(["gamma", "--process", "nope", "--out-dir"]).arg(&dir).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));

    let path = dir.join("cfg.json");
    std::fs::write(&path, r#"{"study": "regimes", "p": [1.0]}"#).unwrap();
    let from_file = sieve().arg("--config").arg(&path).arg("--out-dir").arg(&dir).output().unwrap();
    assert!(from_file.status.success());
    let mismatch = sieve().arg("--config").arg(&path).args(["gamma", "--out-dir"]).arg(&dir).output().unwrap();
    assert_eq!(mismatch.status.code(), Some(2));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn non_tiling_lattice_skips_the_exactness_check() {
    let spec = ProcessSpec { kind: ProcessKind::Lattice { offset: 0.5 }, intensity: 2.0, marks: MarkLaw::atom(1.0) };
    let g = GammaConfig { process: spec, eps: vec![0.125], seeds: 2, ..GammaConfig::default() };
    let r = run(&cfg(0, Study::Gamma(g))).unwrap();
    assert!(r.checks.is_empty());
    assert_eq!(r.omissions.len(), 1);
}
