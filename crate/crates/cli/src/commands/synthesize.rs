//! View synthesis under a saved state: warp each support frame into the
//! target view and report how well it reconstructs the target.

use std::path::Path;

use photodepth::geometry::synthesize_support;
use photodepth::losses::photometric_loss;
use photodepth::optimizer::SceneState;
use serde::Serialize;

use crate::config::AppConfig;
use crate::manifest::load_manifest;
use crate::{io, CliError};

#[derive(Serialize)]
struct SupportReport {
    support: String,
    valid_fraction: f64,
    /// Photometric loss averaged over valid pixels; 0 when none are valid.
    mean_photometric: f64,
}

#[derive(Serialize)]
struct SynthesisSummary {
    scene_id: String,
    lambda: f64,
    supports: Vec<SupportReport>,
    mean_photometric: f64,
}

pub fn run(
    manifest_path: &Path,
    state_path: &Path,
    config: &AppConfig,
    out: &Path,
) -> Result<(), CliError> {
    let manifest = load_manifest(manifest_path)?;
    let state: SceneState = io::read_json(state_path)?;
    let target = io::load_image(manifest.target())?;

    if (state.height(), state.width()) != (target.height(), target.width()) {
        return Err(CliError::Input(format!(
            "state is {}x{} but the target frame is {}x{}",
            state.height(),
            state.width(),
            target.height(),
            target.width()
        )));
    }
    if state.n_supports() != manifest.supports().len() {
        return Err(CliError::Input(format!(
            "state holds {} poses but the manifest lists {} support frames",
            state.n_supports(),
            manifest.supports().len()
        )));
    }

    let depth = state.depth_map();
    let k = state.intrinsics();
    let poses = state.poses();
    let lambda = config.optimizer.loss.lambda;

    let mut reports = Vec::new();
    let mut mean_sum = 0.0;
    for (i, (path, pose)) in manifest.supports().iter().zip(&poses).enumerate() {
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

        let (synth, valid) = synthesize_support(&depth, &support, pose, &k);
        let loss = photometric_loss(&target, &synth, &valid, lambda)
            .map_err(|e| CliError::Input(e.to_string()))?;

        let tag = format!("{:02}", i + 1);
        io::write_image_fmap(&out.join(format!("synth_{tag}.fmap")), &synth)?;
        io::save_image_png(&out.join(format!("synth_{tag}.png")), &synth)?;
        io::save_mask_png(&out.join(format!("valid_{tag}.png")), &valid)?;
        io::write_fmap(
            &out.join(format!("loss_{tag}.fmap")),
            target.height(),
            target.width(),
            1,
            loss.values(),
        )?;

        let n_valid = valid.data().iter().filter(|&&v| v).count();
        let mean = if n_valid == 0 {
            0.0
        } else {
            loss.values().iter().sum::<f64>() / n_valid as f64
        };
        mean_sum += mean;
        reports.push(SupportReport {
            support: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("support_{tag}")),
            valid_fraction: n_valid as f64 / (target.height() * target.width()) as f64,
            mean_photometric: mean,
        });
    }

    let summary = SynthesisSummary {
        scene_id: manifest.scene_id.clone(),
        lambda,
        mean_photometric: mean_sum / reports.len() as f64,
        supports: reports,
    };
    io::write_json(&out.join("summary.json"), &summary)?;
    println!(
        "synthesized {} supports, mean photometric loss {:.3e}",
        summary.supports.len(),
        summary.mean_photometric
    );
    Ok(())
}
