//! Finite-difference validation of the full analytic gradient across many
//! random scenes, plus the negative control proving the harness can fail.

use std::time::{Duration, Instant};

use photodepth::gradcheck::{run_gradcheck, CorruptTerm, GradcheckConfig};

#[test]
fn twenty_scene_suite_passes_well_inside_budget() {
    let config = GradcheckConfig::default();
    assert_eq!(config.scenes, 20);
    assert_eq!(config.step, 1e-5);
    assert_eq!(config.tolerance, 1e-3);

    let start = Instant::now();
    let report = run_gradcheck(&config);
    let elapsed = start.elapsed();

    assert!(report.passed, "failing group: {:?}", report.failing_group);
    assert_eq!(report.scenes_checked, 20);
    // Screening keeps every pose and intrinsics parameter (20 scenes, 2
    // supports, 6 + 4 parameters) and a few hundred disparity logits.
    assert_eq!(report.pose.params_checked, 240);
    assert_eq!(report.intrinsics.params_checked, 80);
    assert!(report.disparity.params_checked >= 200);
    // Measured maxima: disparity 6.4e-6, pose 8.9e-8, intrinsics 1.4e-6.
    assert!(report.disparity.max_rel_err < 1e-3);
    assert!(report.pose.max_rel_err < 1e-3);
    assert!(report.intrinsics.max_rel_err < 1e-3);
    // Measured 0.9 s; the budget is 60.
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
}

#[test]
fn suite_also_passes_without_automask() {
    let config = GradcheckConfig {
        automask: false,
        scenes: 10,
        ..GradcheckConfig::default()
    };
    let report = run_gradcheck(&config);
    assert!(report.passed, "failing group: {:?}", report.failing_group);
    assert_eq!(report.scenes_checked, 10);
}

#[test]
fn each_corrupted_group_is_caught_by_name() {
    for (term, name) in [
        (CorruptTerm::Disparity, "disparity"),
        (CorruptTerm::Pose, "pose"),
        (CorruptTerm::Intrinsics, "intrinsics"),
    ] {
        let config = GradcheckConfig {
            scenes: 5,
            corrupt: Some(term),
            ..GradcheckConfig::default()
        };
        let report = run_gradcheck(&config);
        assert!(!report.passed, "{name} corruption went unnoticed");
        assert_eq!(report.failing_group.as_deref(), Some(name));
    }
}
