use std::time::Instant;

use memdec_core::checks::{gradient_suite, SUITE_TOLERANCE};

#[test]
fn every_check_is_within_tolerance() {
    let start = Instant::now();
    let suite = gradient_suite(2024).unwrap();
    let elapsed = start.elapsed();
    assert!(suite.len() >= 29);
    for e in &suite {
        assert!(e.report.checked > 0, "{}", e.name);
        assert!(
            e.report.max_rel_error < SUITE_TOLERANCE,
            "{}: {:e} at {:?}",
            e.name,
            e.report.max_rel_error,
            e.report.worst
        );
    }
    let names: Vec<_> = suite.iter().map(|e| e.name).collect();
    for expected in [
        "loss/memory",
        "loss/memory-dot",
        "loss/lstm",
        "ccmf_fuse",
        "circular_conv",
    ] {
        assert!(names.contains(&expected), "{expected}");
    }
    assert!(elapsed.as_secs() < 60, "{elapsed:?}");
}

#[test]
fn suite_is_seed_independent() {
    for seed in [1, 77] {
        assert!(gradient_suite(seed).unwrap().iter().all(|e| e.passed()));
    }
}
