//! Apply the augmentation policy to a sequence. The whole frame tuple shares
//! one random draw so geometry stays consistent across frames, and the
//! transformed intrinsics are written alongside.

use std::path::Path;

use photodepth::augment::apply_policy;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::AppConfig;
use crate::manifest::{load_manifest, SequenceManifest};
use crate::{io, CliError};

pub fn run(
    manifest_path: &Path,
    config: &AppConfig,
    out: &Path,
    jobs: usize,
) -> Result<(), CliError> {
    let manifest = load_manifest(manifest_path)?;
    let Some(k_path) = &manifest.intrinsics else {
        return Err(CliError::Input(format!(
            "{}: augmentation transforms the camera, so the manifest must \
             reference intrinsics",
            manifest_path.display()
        )));
    };
    let k = io::read_intrinsics_json(k_path)?;

    let mut frames = Vec::with_capacity(manifest.frames.len());
    for path in &manifest.frames {
        frames.push(io::load_image(path)?);
    }

    let policy = &config.augment;
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let (augmented, k_out, record) = apply_policy(&mut rng, policy, &frames, &k)
        .map_err(|e| CliError::Input(e.to_string()))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Input(format!("worker pool: {e}")))?;
    let names: Vec<String> = (0..augmented.len()).map(|i| format!("frame_{i:02}")).collect();
    pool.install(|| {
        augmented
            .par_iter()
            .zip(&names)
            .map(|(frame, name)| {
                io::write_image_fmap(&out.join(format!("{name}.fmap")), frame)?;
                io::save_image_png(&out.join(format!("{name}.png")), frame)
            })
            .collect::<Result<(), CliError>>()
    })?;

    io::write_intrinsics_json(&out.join("intrinsics.json"), &k_out)?;
    io::write_json(&out.join("applied_ops.json"), &record)?;
    let out_manifest = SequenceManifest {
        scene_id: format!("{}_aug", manifest.scene_id),
        frame_rate: manifest.frame_rate,
        frames: names.iter().map(|n| format!("{n}.fmap").into()).collect(),
        intrinsics: Some("intrinsics.json".into()),
        // Ground truth does not survive geometric augmentation.
        gt_depths: None,
    };
    io::write_json(&out.join("manifest.json"), &out_manifest)?;

    println!(
        "augmented {} frames with {} ops (seed {})",
        augmented.len(),
        record.len(),
        policy.seed
    );
    Ok(())
}
