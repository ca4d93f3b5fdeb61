//! Sequence manifest: the ordered frame list a command operates on. The first
//! frame is the target; the rest are supports in offset order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceManifest {
    pub scene_id: String,
    pub frame_rate: f64,
    pub frames: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_depths: Option<Vec<PathBuf>>,
}

impl SequenceManifest {
    pub fn target(&self) -> &Path {
        &self.frames[0]
    }

    pub fn supports(&self) -> &[PathBuf] {
        &self.frames[1..]
    }
}

/// Parse and validate: at least two frames, positive frame rate, and every
/// referenced file present. Relative paths resolve against the manifest's
/// directory so a scene directory can move as a unit.
pub fn load_manifest(path: &Path) -> Result<SequenceManifest, CliError> {
    let mut manifest: SequenceManifest = crate::io::read_json(path)?;
    let err = |what: String| CliError::Input(format!("{}: {what}", path.display()));

    if manifest.scene_id.is_empty() {
        return Err(err("scene_id must be nonempty".into()));
    }
    if !(manifest.frame_rate > 0.0 && manifest.frame_rate.is_finite()) {
        return Err(err(format!("frame rate {} must be positive", manifest.frame_rate)));
    }
    if manifest.frames.len() < 2 {
        return Err(err(format!(
            "a sequence needs at least 2 frames, found {}",
            manifest.frames.len()
        )));
    }

    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &PathBuf| {
        if p.is_absolute() {
            p.clone()
        } else {
            base.join(p)
        }
    };
    for frame in manifest.frames.iter_mut() {
        *frame = resolve(frame);
    }
    if let Some(k) = manifest.intrinsics.as_mut() {
        *k = resolve(k);
    }
    if let Some(depths) = manifest.gt_depths.as_mut() {
        for d in depths.iter_mut() {
            *d = resolve(d);
        }
    }

    let mut missing: Vec<String> = Vec::new();
    let mut check = |p: &Path| {
        if !p.is_file() {
            missing.push(p.display().to_string());
        }
    };
    for frame in &manifest.frames {
        check(frame);
    }
    if let Some(k) = &manifest.intrinsics {
        check(k);
    }
    for d in manifest.gt_depths.iter().flatten() {
        check(d);
    }
    if !missing.is_empty() {
        return Err(err(format!("missing referenced files: {}", missing.join(", "))));
    }
    Ok(manifest)
}
