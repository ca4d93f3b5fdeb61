//! Finite-difference validation of the analytic gradients, reported per
//! parameter group. A failure exits with the check code so CI can gate on it.

use std::path::Path;

use photodepth::gradcheck::{run_gradcheck, GroupSummary};

use crate::config::AppConfig;
use crate::{io, CliError};

fn print_group(name: &str, group: &GroupSummary, tolerance: f64) {
    let verdict = if group.max_rel_err <= tolerance {
        "ok"
    } else {
        "FAIL"
    };
    println!(
        "  {name:<10} {:>6} params, max rel err {:.3e}  [{verdict}]",
        group.params_checked, group.max_rel_err
    );
}

pub fn run(config: &AppConfig, out: &Path) -> Result<(), CliError> {
    let report = run_gradcheck(&config.gradcheck);
    io::write_json(&out.join("report.json"), &report)?;

    println!(
        "checked {} scenes ({} rejected as unstable), step {:.1e}, tolerance {:.1e}",
        report.scenes_checked, report.scenes_rejected, report.step, report.tolerance
    );
    print_group("disparity", &report.disparity, report.tolerance);
    print_group("pose", &report.pose, report.tolerance);
    print_group("intrinsics", &report.intrinsics, report.tolerance);

    if report.passed {
        println!("gradcheck passed");
        Ok(())
    } else {
        let group = report.failing_group.as_deref().unwrap_or("unknown");
        Err(CliError::Check(format!(
            "analytic gradients disagree with finite differences in the {group} group"
        )))
    }
}
