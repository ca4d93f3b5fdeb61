//! Synthetic planar scenes with exact ground truth.
//!
//! A sinusoid texture is painted on one or two planes and rendered from a
//! camera translating laterally at constant velocity; supports sit at offsets
//! +1, +2, ... so their valid warp regions nest. The target image is defined
//! as the warp of the first valid support, which makes the reconstruction loss
//! at the ground-truth state exactly zero on every kept pixel: optimization
//! and evaluation then measure the solver, not resampling error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Intrinsics;
use crate::depth::{DepthMap, DepthRange, DisparityField};
use crate::geometry::{bilinear_sample, reproject};
use crate::image::ImageBuffer;
use crate::losses::{total_loss, LossConfig};
use crate::math::logit;
use crate::optimizer::{intrinsics_from_raw, raw_from_intrinsics, SceneState};
use crate::pose::PoseSE3;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("degenerate scene recipe: {reason}")]
    Degenerate { reason: &'static str },
    #[error("texture has a flat 8x8 region at ({row}, {col})")]
    FlatTexture { row: usize, col: usize },
    #[error("scene is not self-consistent: reconstruction {reconstruction} at ground truth")]
    Inconsistent { reconstruction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneKind {
    /// Single plane parallel to the image at constant depth.
    FrontoParallel { depth: f64 },
    /// Plane whose inverse depth ramps linearly from the left image edge to
    /// the right one.
    SlantedPlane { depth_left: f64, depth_right: f64 },
    /// Near plane on the left half, far plane on the right, with a step
    /// discontinuity under the principal point.
    TwoPlane { near: f64, far: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneRecipe {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kind: SceneKind,
    pub focal: f64,
    /// Lateral camera travel per frame, scene units. May be zero or negative.
    pub baseline: f64,
    /// Supports are rendered at temporal offsets 1..=n_supports.
    pub n_supports: usize,
    /// Sinusoid count per channel.
    pub waves: usize,
}

impl Default for SceneRecipe {
    fn default() -> Self {
        Self {
            height: 48,
            width: 64,
            channels: 3,
            kind: SceneKind::FrontoParallel { depth: 5.0 },
            focal: 100.0,
            baseline: 0.1,
            n_supports: 2,
            waves: 6,
        }
    }
}

impl SceneRecipe {
    fn depths(&self) -> (f64, f64) {
        match self.kind {
            SceneKind::FrontoParallel { depth } => (depth, depth),
            SceneKind::SlantedPlane {
                depth_left,
                depth_right,
            } => (depth_left.min(depth_right), depth_left.max(depth_right)),
            SceneKind::TwoPlane { near, far } => (near.min(far), near.max(far)),
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let reason = if self.height < 8 || self.width < 8 {
            Some("image must be at least 8x8")
        } else if self.channels != 1 && self.channels != 3 {
            Some("channels must be 1 or 3")
        } else if !(self.focal > 0.0 && self.focal.is_finite()) {
            Some("focal must be positive")
        } else if !self.baseline.is_finite() {
            Some("baseline must be finite")
        } else if self.n_supports == 0 || self.n_supports > 8 {
            Some("support count must lie in 1..=8")
        } else if self.waves < 2 {
            Some("at least two texture waves required")
        } else {
            None
        };
        if let Some(reason) = reason {
            return Err(SceneError::Degenerate { reason });
        }
        let (min_depth, max_depth) = self.depths();
        if !(min_depth > 0.0 && max_depth.is_finite()) {
            return Err(SceneError::Degenerate {
                reason: "plane depths must be positive and finite",
            });
        }
        // The slanted-plane inverse warp u_t = (u_s + g*alpha) / (1 - g*beta)
        // degenerates when the support view folds the plane over itself.
        if let SceneKind::SlantedPlane {
            depth_left,
            depth_right,
        } = self.kind
        {
            let beta = (1.0 / depth_right - 1.0 / depth_left) / self.width as f64;
            let g_max = self.n_supports as f64 * self.focal * self.baseline.abs();
            if (g_max * beta).abs() >= 0.5 {
                return Err(SceneError::Degenerate {
                    reason: "slant too steep for the requested baseline",
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    amp: f64,
    fu: f64,
    fv: f64,
    phase: f64,
}

/// Smooth periodic texture: per channel, a sum of random sinusoids around 0.5
/// with total amplitude 0.42, so values stay inside [0.08, 0.92]. Infinitely
/// differentiable, which keeps bilinear-interpolation kinks mild for the
/// finite-difference suites.
#[derive(Debug, Clone)]
pub struct SinusoidTexture {
    waves: Vec<Vec<Wave>>,
}

impl SinusoidTexture {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, channels: usize, waves_per_channel: usize) -> Self {
        let mut waves = Vec::with_capacity(channels);
        for _ in 0..channels {
            let mut ws: Vec<Wave> = (0..waves_per_channel)
                .map(|_| {
                    let wavelength = rng.random_range(6.0..24.0);
                    let angle = rng.random_range(0.0..std::f64::consts::TAU);
                    Wave {
                        amp: rng.random_range(0.5..1.0),
                        fu: angle.cos() / wavelength,
                        fv: angle.sin() / wavelength,
                        phase: rng.random_range(0.0..std::f64::consts::TAU),
                    }
                })
                .collect();
            let total: f64 = ws.iter().map(|w| w.amp).sum();
            for w in ws.iter_mut() {
                w.amp *= 0.42 / total;
            }
            waves.push(ws);
        }
        Self { waves }
    }

    pub fn channels(&self) -> usize {
        self.waves.len()
    }

    pub fn eval(&self, u: f64, v: f64, channel: usize) -> f64 {
        0.5 + self.waves[channel]
            .iter()
            .map(|w| w.amp * (std::f64::consts::TAU * (w.fu * u + w.fv * v) + w.phase).sin())
            .sum::<f64>()
    }

    /// Point-sample the texture at pixel centers.
    pub fn sample_image(&self, height: usize, width: usize) -> ImageBuffer {
        let channels = self.channels();
        ImageBuffer::from_fn_clamped(height, width, channels, |r, c, ch| {
            self.eval(c as f64 + 0.5, r as f64 + 0.5, ch)
        })
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub target: ImageBuffer,
    pub supports: Vec<ImageBuffer>,
    /// Ground-truth depth, realized from the stored logits so it is
    /// bit-identical to `ground_truth_state().depth_map()`.
    pub depth: DepthMap,
    pub poses: Vec<PoseSE3>,
    pub offsets: Vec<i64>,
    pub intrinsics: Intrinsics,
    /// Depth range bracketing the ground truth with a factor-2 margin.
    pub depth_range: DepthRange,
    // Raw parameterization the scene was rendered from. Realizing depth and
    // intrinsics from raw values is not a bit-stable round trip, so the raw
    // values are the source of truth.
    gt_logits: Vec<f64>,
    gt_raw_intrinsics: [f64; 4],
}

impl SyntheticScene {
    /// State whose realized geometry reproduces the scene's warps bit-exactly.
    pub fn ground_truth_state(&self) -> SceneState {
        SceneState::from_parts(
            self.target.height(),
            self.target.width(),
            self.gt_logits.clone(),
            self.poses.iter().map(|p| p.params()).collect(),
            self.gt_raw_intrinsics,
            self.depth_range,
        )
        .expect("ground-truth shapes are consistent")
    }

    pub fn gt_disparity(&self) -> DisparityField {
        self.ground_truth_state().disparity()
    }
}

/// Inverse-depth coefficients in the target view: 1/Z(u) = alpha + beta * u
/// per plane segment. TwoPlane returns the segment for a given target u.
fn inverse_depth_coeffs(kind: &SceneKind, width: f64, u: f64) -> (f64, f64) {
    match *kind {
        SceneKind::FrontoParallel { depth } => (1.0 / depth, 0.0),
        SceneKind::SlantedPlane {
            depth_left,
            depth_right,
        } => {
            let beta = (1.0 / depth_right - 1.0 / depth_left) / width;
            (1.0 / depth_left, beta)
        }
        SceneKind::TwoPlane { near, far } => {
            if u < width / 2.0 {
                (1.0 / near, 0.0)
            } else {
                (1.0 / far, 0.0)
            }
        }
    }
}

/// Build a deterministic planar scene. The target is derived from the first
/// support whose warp covers the pixel, falling back to the raw texture where
/// no warp does, so the photometric loss at [`SyntheticScene::ground_truth_state`]
/// is exactly zero on all surviving pixels.
pub fn make_synthetic_scene(recipe: &SceneRecipe, seed: u64) -> Result<SyntheticScene, SceneError> {
    recipe.validate()?;
    let (h, w) = (recipe.height, recipe.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let texture = SinusoidTexture::sample(&mut rng, recipe.channels, recipe.waves);
    let ideal_k = Intrinsics::new(
        recipe.focal,
        recipe.focal,
        w as f64 / 2.0,
        h as f64 / 2.0,
        w,
        h,
    )
    .expect("recipe validation keeps intrinsics legal");
    let gt_raw_intrinsics =
        raw_from_intrinsics(&ideal_k).expect("centered principal point is interior");
    let k = intrinsics_from_raw(gt_raw_intrinsics, w, h);

    let (min_depth, max_depth) = recipe.depths();
    let depth_range = DepthRange::new(min_depth * 0.5, max_depth * 2.0)
        .expect("validated depths bracket cleanly");
    let gt_logits: Vec<f64> = (0..h * w)
        .map(|i| {
            let u = (i % w) as f64 + 0.5;
            let (alpha, beta) = inverse_depth_coeffs(&recipe.kind, w as f64, u);
            logit(depth_range.disparity_of(1.0 / (alpha + beta * u)))
        })
        .collect();

    let offsets: Vec<i64> = (1..=recipe.n_supports as i64).collect();
    let poses: Vec<PoseSE3> = offsets
        .iter()
        .map(|&kk| PoseSE3::new([0.0; 3], [-(kk as f64) * recipe.baseline, 0.0, 0.0]))
        .collect();
    let gt_state = SceneState::from_parts(
        h,
        w,
        gt_logits.clone(),
        poses.iter().map(|p| p.params()).collect(),
        gt_raw_intrinsics,
        depth_range,
    )
    .expect("shapes are consistent by construction");
    let depth = gt_state.depth_map();

    // Paint each support by pulling the target-view texture coordinate back
    // through the planar warp: u_s = u_t - g * (alpha + beta * u_t) with
    // g = k * f * b, inverted in closed form per plane segment.
    let mut supports = Vec::with_capacity(recipe.n_supports);
    for &kk in &offsets {
        let g = kk as f64 * recipe.focal * recipe.baseline;
        let img = ImageBuffer::from_fn_clamped(h, w, recipe.channels, |r, c, ch| {
            let u_s = c as f64 + 0.5;
            let v = r as f64 + 0.5;
            let u_t = match recipe.kind {
                SceneKind::TwoPlane { near, far } => {
                    // The near plane occludes; prefer its candidate when that
                    // candidate really lies in the near half.
                    let near_u = u_s + g / near;
                    if near_u < w as f64 / 2.0 {
                        near_u
                    } else {
                        u_s + g / far
                    }
                }
                _ => {
                    let (alpha, beta) = inverse_depth_coeffs(&recipe.kind, w as f64, u_s);
                    (u_s + g * alpha) / (1.0 - g * beta)
                }
            };
            texture.eval(u_t, v, ch)
        });
        supports.push(img);
    }

    let flows: Vec<_> = poses
        .iter()
        .map(|pose| reproject(&depth, pose, &k))
        .collect();
    let warped: Vec<_> = supports
        .iter()
        .zip(&flows)
        .map(|(s, f)| bilinear_sample(s, f))
        .collect();
    let fallback = texture.sample_image(h, w);
    let target = ImageBuffer::from_fn_clamped(h, w, recipe.channels, |r, c, ch| {
        for (img, mask) in &warped {
            if mask.get(r, c) {
                return img.get(r, c, ch);
            }
        }
        fallback.get(r, c, ch)
    });

    check_texture_energy(&target)?;

    let scene = SyntheticScene {
        target,
        supports,
        depth,
        poses,
        offsets,
        intrinsics: k,
        depth_range,
        gt_logits,
        gt_raw_intrinsics,
    };

    let (report, _) = total_loss(
        &scene.ground_truth_state(),
        &scene.target,
        &scene.supports,
        &LossConfig::default(),
    )
    .expect("generated shapes are consistent");
    if !(report.reconstruction < 1e-6) {
        return Err(SceneError::Inconsistent {
            reconstruction: report.reconstruction,
        });
    }
    Ok(scene)
}

/// Every 8x8 block must contain a neighbor difference above 1e-3 in some
/// channel, otherwise photometric optimization is blind there.
fn check_texture_energy(img: &ImageBuffer) -> Result<(), SceneError> {
    let (h, w, channels) = (img.height(), img.width(), img.channels());
    let mut row = 0;
    while row < h {
        let mut col = 0;
        let r1 = (row + 8).min(h);
        while col < w {
            let c1 = (col + 8).min(w);
            let mut energy: f64 = 0.0;
            for r in row..r1 {
                for c in col..c1 {
                    for ch in 0..channels {
                        if c + 1 < w {
                            energy = energy
                                .max((img.get(r, c + 1, ch) - img.get(r, c, ch)).abs());
                        }
                        if r + 1 < h {
                            energy = energy
                                .max((img.get(r + 1, c, ch) - img.get(r, c, ch)).abs());
                        }
                    }
                }
            }
            if energy <= 1e-3 {
                return Err(SceneError::FlatTexture { row, col });
            }
            col += 8;
        }
        row += 8;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fronto_parallel_disparity_closed_form() {
        let recipe = SceneRecipe::default();
        let scene = make_synthetic_scene(&recipe, 3).unwrap();
        // f*b/Z = 100*0.1/5 = 2 px for the first support, 4 px for the second.
        for (i, &kk) in scene.offsets.iter().enumerate() {
            assert_eq!(kk, i as i64 + 1);
            let flow = reproject(&scene.depth, &scene.poses[i], &scene.intrinsics);
            let shift = 2.0 * kk as f64;
            let coord = flow.coord(10, 20);
            assert_relative_eq!(coord[0], 20.5 - shift, epsilon = 1e-9);
            assert_relative_eq!(coord[1], 10.5, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_baseline_gives_identical_frames() {
        let recipe = SceneRecipe {
            baseline: 0.0,
            ..SceneRecipe::default()
        };
        let scene = make_synthetic_scene(&recipe, 4).unwrap();
        for s in &scene.supports {
            assert_eq!(*s, scene.target);
        }
    }

    #[test]
    fn slanted_plane_disparity_is_linear_ramp() {
        let recipe = SceneRecipe {
            kind: SceneKind::SlantedPlane {
                depth_left: 4.0,
                depth_right: 8.0,
            },
            ..SceneRecipe::default()
        };
        let scene = make_synthetic_scene(&recipe, 5).unwrap();
        let flow = reproject(&scene.depth, &scene.poses[0], &scene.intrinsics);
        // Shift = f*b/Z(u) is affine in u; check collinearity along a row.
        let shift = |c: usize| (c as f64 + 0.5) - flow.coord(20, c)[0];
        let (s0, s1, s2) = (shift(10), shift(30), shift(50));
        assert_relative_eq!(s1 - s0, s2 - s1, epsilon = 1e-9);
        assert!(s0 > s1 && s1 > s2, "larger depth means smaller shift");
    }

    #[test]
    fn ground_truth_reconstruction_is_zero_on_kept_pixels() {
        for (seed, kind) in [
            (7, SceneKind::FrontoParallel { depth: 5.0 }),
            (
                8,
                SceneKind::SlantedPlane {
                    depth_left: 4.0,
                    depth_right: 9.0,
                },
            ),
            (9, SceneKind::TwoPlane { near: 3.0, far: 9.0 }),
        ] {
            let recipe = SceneRecipe {
                kind,
                ..SceneRecipe::default()
            };
            let scene = make_synthetic_scene(&recipe, seed).unwrap();
            let (report, _) = total_loss(
                &scene.ground_truth_state(),
                &scene.target,
                &scene.supports,
                &LossConfig::default(),
            )
            .unwrap();
            assert_eq!(report.reconstruction, 0.0, "kind {kind:?}");
            assert!(report.automask_coverage > 0.5, "kind {kind:?}");
        }
    }

    #[test]
    fn texture_has_no_flat_blocks() {
        let scene = make_synthetic_scene(&SceneRecipe::default(), 11).unwrap();
        assert!(check_texture_energy(&scene.target).is_ok());
        let flat = ImageBuffer::filled(32, 32, 1, 0.5);
        assert!(matches!(
            check_texture_energy(&flat),
            Err(SceneError::FlatTexture { .. })
        ));
    }

    #[test]
    fn degenerate_recipes_rejected() {
        let bad = SceneRecipe {
            kind: SceneKind::FrontoParallel { depth: -1.0 },
            ..SceneRecipe::default()
        };
        assert!(bad.validate().is_err());
        let bad = SceneRecipe {
            n_supports: 0,
            ..SceneRecipe::default()
        };
        assert!(bad.validate().is_err());
        let bad = SceneRecipe {
            kind: SceneKind::SlantedPlane {
                depth_left: 0.2,
                depth_right: 100.0,
            },
            baseline: 1.0,
            ..SceneRecipe::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn scene_is_deterministic_per_seed() {
        let a = make_synthetic_scene(&SceneRecipe::default(), 42).unwrap();
        let b = make_synthetic_scene(&SceneRecipe::default(), 42).unwrap();
        let c = make_synthetic_scene(&SceneRecipe::default(), 43).unwrap();
        assert_eq!(a.target, b.target);
        assert_eq!(a.supports, b.supports);
        assert_ne!(a.target, c.target);
    }
}
