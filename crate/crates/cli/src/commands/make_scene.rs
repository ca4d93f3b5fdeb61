//! Render a synthetic planar scene to disk: frames, exact ground truth, and a
//! manifest so the other subcommands can consume the directory directly.

use std::path::{Path, PathBuf};

use photodepth::synth::{make_synthetic_scene, SceneKind};

use crate::config::AppConfig;
use crate::manifest::SequenceManifest;
use crate::{io, CliError};

fn kind_label(kind: &SceneKind) -> &'static str {
    match kind {
        SceneKind::FrontoParallel { .. } => "fronto_parallel",
        SceneKind::SlantedPlane { .. } => "slanted_plane",
        SceneKind::TwoPlane { .. } => "two_plane",
    }
}

pub fn run(config: &AppConfig, out: &Path) -> Result<(), CliError> {
    let seed = config.seed.unwrap_or(0);
    let scene =
        make_synthetic_scene(&config.scene, seed).map_err(|e| CliError::Input(e.to_string()))?;
    let (h, w) = (scene.target.height(), scene.target.width());

    // Frames go to disk as float maps so downstream losses see the rendered
    // values exactly; the PNGs are previews only.
    io::write_image_fmap(&out.join("target.fmap"), &scene.target)?;
    io::save_image_png(&out.join("target.png"), &scene.target)?;
    let mut frames: Vec<PathBuf> = vec!["target.fmap".into()];
    for (support, &offset) in scene.supports.iter().zip(&scene.offsets) {
        let stem = format!("support_{offset:02}");
        io::write_image_fmap(&out.join(format!("{stem}.fmap")), support)?;
        io::save_image_png(&out.join(format!("{stem}.png")), support)?;
        frames.push(format!("{stem}.fmap").into());
    }

    io::write_depth_fmap(&out.join("depth.fmap"), &scene.depth)?;
    let disparity = scene.gt_disparity();
    io::write_fmap(&out.join("disparity.fmap"), h, w, 1, disparity.values())?;
    io::write_intrinsics_json(&out.join("intrinsics.json"), &scene.intrinsics)?;
    io::write_poses_json(&out.join("poses.json"), &scene.poses)?;
    io::write_json(&out.join("state.json"), &scene.ground_truth_state())?;

    let manifest = SequenceManifest {
        scene_id: format!("{}_{seed}", kind_label(&config.scene.kind)),
        frame_rate: 10.0,
        frames,
        intrinsics: Some("intrinsics.json".into()),
        gt_depths: Some(vec!["depth.fmap".into()]),
    };
    io::write_json(&out.join("manifest.json"), &manifest)?;

    println!(
        "scene {}: {} frames of {h}x{w}x{} written to {}",
        manifest.scene_id,
        1 + scene.supports.len(),
        scene.target.channels(),
        out.display()
    );
    Ok(())
}
