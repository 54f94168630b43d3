use numcore::gradcheck::{run_suite, GradCheckStatus, DEFAULT_EPS, DEFAULT_TOLERANCE, SUITE_OPS};

#[test]
fn every_op_matches_finite_differences() {
    let cases = run_suite(7, 5, DEFAULT_EPS, DEFAULT_TOLERANCE);
    assert_eq!(cases.len(), SUITE_OPS.len() * 5);
    let failures: Vec<String> = cases
        .iter()
        .filter(|c| c.report.status != GradCheckStatus::Pass)
        .map(|c| format!("{} {:?}: {:?} (max rel {:.3e} at {:?})", c.op, c.shapes, c.report.status, c.report.max_rel_error, c.report.worst_at))
        .collect();
    assert!(failures.is_empty(), "gradient mismatches:\n{}", failures.join("\n"));
}

#[test]
fn suite_is_stable_across_seeds() {
    for seed in [1, 2, 3] {
        let cases = run_suite(seed, 5, DEFAULT_EPS, DEFAULT_TOLERANCE);
        for c in &cases {
            assert!(c.report.passed(), "seed {seed}: {} {:?} -> {:?} {:.3e}", c.op, c.shapes, c.report.status, c.report.max_rel_error);
        }
    }
}
