use std::time::Instant;

use metroflow::gradsuite::{run_op, run_suite, SuiteConfig, OPERATIONS};

#[test]
fn every_operation_matches_finite_differences() {
    let cfg = SuiteConfig::default();
    let start = Instant::now();
    let reports = run_suite(&cfg).unwrap();
    for r in &reports {
        println!("{:<16} max rel err {:.3e} over {} coords", r.name, r.max_rel_error, r.coords_checked);
    }
    assert_eq!(reports.len(), OPERATIONS.len());
    for r in &reports {
        assert!(r.passes(cfg.tol), "{r:?}");
        assert_eq!(r.probes, 10);
    }
    println!("suite took {:?}", start.elapsed());
}

#[test]
fn full_forward_fault_is_detected() {
    let cfg = SuiteConfig {
        probes: 1,
        max_coords: Some(1),
        analytic_scale: 1.001,
        ..Default::default()
    };
    assert!(!run_op("full_forward", &cfg).unwrap().passes(cfg.tol));
}
