//! Fit a scene state to a sequence and write the state, its realized
//! geometry, and the full per-iteration loss trace.

use std::path::Path;

use photodepth::losses::LossReport;
use photodepth::optimizer::{coarse_to_fine, optimize, IntrinsicsMode, SceneState};
use serde::Serialize;

use crate::config::AppConfig;
use crate::manifest::load_manifest;
use crate::{io, CliError};

#[derive(Serialize)]
struct TraceRow<'a> {
    iteration: usize,
    total: f64,
    reconstruction: f64,
    smoothness: f64,
    automask_coverage: f64,
    all_masked: bool,
    nonfinite_zeroed: usize,
    /// Per-support argmin counts, `;`-joined so the CSV stays rectangular.
    argmin_histogram: &'a str,
}

fn write_trace(path: &Path, trace: &[LossReport]) -> Result<(), CliError> {
    let mut writer = io::csv_writer(path)?;
    for (iteration, report) in trace.iter().enumerate() {
        let histogram = report
            .argmin_histogram
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join(";");
        writer
            .serialize(TraceRow {
                iteration,
                total: report.total,
                reconstruction: report.reconstruction,
                smoothness: report.smoothness,
                automask_coverage: report.automask_coverage,
                all_masked: report.all_masked,
                nonfinite_zeroed: report.nonfinite_zeroed,
                argmin_histogram: &histogram,
            })
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    writer
        .flush()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn run(manifest_path: &Path, config: &AppConfig, out: &Path) -> Result<(), CliError> {
    let manifest = load_manifest(manifest_path)?;
    let target = io::load_image(manifest.target())?;
    let mut supports = Vec::new();
    for path in manifest.supports() {
        let support = io::load_image(path)?;
        if (support.height(), support.width(), support.channels())
            != (target.height(), target.width(), target.channels())
        {
            return Err(CliError::Input(format!(
                "{}: support shape {}x{}x{} does not match the target",
                path.display(),
                support.height(),
                support.width(),
                support.channels()
            )));
        }
        supports.push(support);
    }

    let opt = &config.optimizer;
    if opt.support_offsets.len() != supports.len() {
        return Err(CliError::Input(format!(
            "config lists {} support offsets but the manifest has {} support frames",
            opt.support_offsets.len(),
            supports.len()
        )));
    }

    // A manifest camera pins the starting intrinsics; combine with
    // `intrinsics_mode = "fixed"` to keep them pinned throughout.
    let init = match &manifest.intrinsics {
        Some(path) => {
            let k = io::read_intrinsics_json(path)?;
            if (k.height, k.width) != (target.height(), target.width()) {
                return Err(CliError::Input(format!(
                    "{}: intrinsics are for {}x{} images, frames are {}x{}",
                    path.display(),
                    k.height,
                    k.width,
                    target.height(),
                    target.width()
                )));
            }
            if opt.pyramid_levels > 1 {
                return Err(CliError::Input(
                    "manifest intrinsics cannot seed a pyramid run; \
                     drop them or set optimizer.pyramid_levels = 1"
                        .into(),
                ));
            }
            let mut state =
                SceneState::init(target.height(), target.width(), supports.len(), opt);
            state.set_intrinsics(&k)?;
            Some(state)
        }
        None => None,
    };

    let (state, trace) = if opt.pyramid_levels > 1 {
        coarse_to_fine(&target, &supports, opt)?
    } else {
        optimize(&target, &supports, opt, init)?
    };

    write_trace(&out.join("trace.csv"), &trace)?;
    io::write_json(&out.join("state.json"), &state)?;
    io::write_fmap(
        &out.join("disparity.fmap"),
        state.height(),
        state.width(),
        1,
        state.disparity().values(),
    )?;
    io::write_depth_fmap(&out.join("depth.fmap"), &state.depth_map())?;
    io::write_poses_json(&out.join("poses.json"), &state.poses())?;
    io::write_intrinsics_json(&out.join("intrinsics.json"), &state.intrinsics())?;

    let last = trace.last().expect("validated configs run at least one iteration");
    let mode = match opt.intrinsics_mode {
        IntrinsicsMode::Fixed => "fixed",
        IntrinsicsMode::Learned => "learned",
    };
    println!(
        "optimized {} iterations ({mode} intrinsics): total {:.6e}, coverage {:.3}",
        trace.len(),
        last.total,
        last.automask_coverage
    );
    Ok(())
}
