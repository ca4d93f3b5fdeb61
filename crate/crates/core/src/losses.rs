//! Photometric loss stack with analytic gradients.
//!
//! The reconstruction term warps every support frame into the target view,
//! scores each with a weighted SSIM + L1 error, takes the per-pixel minimum
//! across supports, removes static pixels whose un-warped support already
//! matches better, and averages over the surviving pixels. An edge-aware
//! smoothness term on mean-normalized disparity regularizes the field.
//!
//! Discrete decisions (argmin selection, the static-pixel mask, absolute-value
//! signs) are treated as constants of the backward pass, matching subgradient
//! practice; gradients are exact wherever those decisions are locally stable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::DisparityField;
use crate::geometry::{bilinear_sample_with_grad, reproject_with_jacobian};
use crate::image::{BoolMask, ImageBuffer};
use crate::math::{sigmoid_derivative, sign, softplus_derivative};
use crate::optimizer::SceneState;
use crate::ssim::{ssim_backward_masked, ssim_map_masked, SsimError};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("at least one support frame is required")]
    NoSupport,
    #[error("support {index} shape does not match the target")]
    SupportShapeMismatch { index: usize },
    #[error("scene state {state_height}x{state_width} does not match target {height}x{width}")]
    StateShapeMismatch {
        state_height: usize,
        state_width: usize,
        height: usize,
        width: usize,
    },
    #[error("loss map shapes disagree")]
    MapShapeMismatch,
    #[error(transparent)]
    Ssim(#[from] SsimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// SSIM weight in the photometric pair; L1 gets `1 - lambda`.
    pub lambda: f64,
    pub smoothness_weight: f64,
    pub automask: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.85,
            smoothness_weight: 1e-3,
            automask: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    valid: BoolMask,
}

impl LossMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, valid: BoolMask) -> Self {
        assert_eq!(values.len(), height * width, "loss map length mismatch");
        assert_eq!(
            (valid.height(), valid.width()),
            (height, width),
            "loss mask shape mismatch"
        );
        for (i, &v) in values.iter().enumerate() {
            debug_assert!(!valid.get_flat(i) || v >= 0.0, "negative loss {v} at {i}");
        }
        Self {
            height,
            width,
            values,
            valid,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &BoolMask {
        &self.valid
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.width + c]
    }

    /// Same mask and shape with every value scaled by `factor >= 0`.
    pub fn scaled(&self, factor: f64) -> LossMap {
        assert!(factor >= 0.0);
        LossMap::new(
            self.height,
            self.width,
            self.values.iter().map(|&v| v * factor).collect(),
            self.valid.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub reconstruction: f64,
    pub smoothness: f64,
    /// Fraction of pixels surviving automask and validity, over all pixels.
    pub automask_coverage: f64,
    /// Count of surviving pixels whose minimum came from each support frame.
    pub argmin_histogram: Vec<usize>,
    /// True when no pixel survived; the reconstruction term is then 0.
    pub all_masked: bool,
    /// Non-finite per-pixel gradients zeroed by the optimizer's guard.
    pub nonfinite_zeroed: usize,
}

#[derive(Debug, Clone)]
pub struct LossGradients {
    pub disparity_logits: Vec<f64>,
    pub poses: Vec<[f64; 6]>,
    pub intrinsics_raw: [f64; 4],
}

/// Weighted SSIM + L1 per pixel: `lambda (1 - SSIM)/2 + (1 - lambda) |t - s|`,
/// with L1 averaged over channels. Invalid pixels carry value 0.
pub fn photometric_loss(
    target: &ImageBuffer,
    synth: &ImageBuffer,
    mask: &BoolMask,
    lambda: f64,
) -> Result<LossMap, LossError> {
    let ssim = ssim_map_masked(target, synth, mask)?;
    let (h, w, channels) = (target.height(), target.width(), target.channels());
    let mut values = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) {
                continue;
            }
            let idx = r * w + c;
            let mut l1 = 0.0;
            for ch in 0..channels {
                l1 += (target.get(r, c, ch) - synth.get(r, c, ch)).abs();
            }
            l1 /= channels as f64;
            let v = lambda * (1.0 - ssim[idx]) * 0.5 + (1.0 - lambda) * l1;
            // max guards the ~1e-16 SSIM overshoot on near-identical windows.
            values[idx] = v.max(0.0);
        }
    }
    Ok(LossMap::new(h, w, values, mask.clone()))
}

/// Gradient of `sum_p upstream[p] * photometric[p]` with respect to `synth`,
/// indexed `pixel * channels + channel`.
pub fn photometric_backward(
    target: &ImageBuffer,
    synth: &ImageBuffer,
    mask: &BoolMask,
    upstream: &[f64],
    lambda: f64,
) -> Vec<f64> {
    let (h, w, channels) = (target.height(), target.width(), target.channels());
    assert_eq!(upstream.len(), h * w, "upstream length mismatch");
    // SSIM path: d/ds of lambda (1 - S)/2 is -lambda/2 * dS/ds.
    let ssim_upstream: Vec<f64> = upstream.iter().map(|&u| -0.5 * lambda * u).collect();
    let mut grad = ssim_backward_masked(target, synth, mask, &ssim_upstream);
    let ch_scale = (1.0 - lambda) / channels as f64;
    for r in 0..h {
        for c in 0..w {
            let idx = r * w + c;
            let u = upstream[idx];
            if u == 0.0 || !mask.get(r, c) {
                continue;
            }
            for ch in 0..channels {
                let diff = synth.get(r, c, ch) - target.get(r, c, ch);
                grad[idx * channels + ch] += u * ch_scale * sign(diff);
            }
        }
    }
    grad
}

/// Per-pixel minimum over support-frame loss maps, with the winning index.
/// A pixel is valid if any map is valid there; ties keep the first frame.
pub fn min_reconstruction(
    maps: &[LossMap],
) -> Result<(LossMap, Vec<Option<usize>>), LossError> {
    let first = maps.first().ok_or(LossError::NoSupport)?;
    let (h, w) = (first.height(), first.width());
    if maps.iter().any(|m| (m.height(), m.width()) != (h, w)) {
        return Err(LossError::MapShapeMismatch);
    }
    let mut values = vec![0.0; h * w];
    let mut valid = BoolMask::all_false(h, w);
    let mut argmin = vec![None; h * w];
    for i in 0..h * w {
        let mut best: Option<(usize, f64)> = None;
        for (k, map) in maps.iter().enumerate() {
            if !map.valid().get_flat(i) {
                continue;
            }
            let v = map.values()[i];
            if best.map_or(true, |(_, b)| v < b) {
                best = Some((k, v));
            }
        }
        if let Some((k, v)) = best {
            values[i] = v;
            argmin[i] = Some(k);
            valid.set(i / w, i % w, true);
        }
    }
    Ok((LossMap::new(h, w, values, valid), argmin))
}

/// Static-pixel mask: keep a pixel only when the best warped reconstruction
/// beats the best un-warped support strictly. Ties drop the pixel, which is
/// the conservative choice for static scenes.
pub fn automask(synth_losses: &[LossMap], identity_losses: &[LossMap]) -> BoolMask {
    assert_eq!(
        synth_losses.len(),
        identity_losses.len(),
        "loss list lengths differ"
    );
    let (h, w) = (synth_losses[0].height(), synth_losses[0].width());
    let mut keep = BoolMask::all_false(h, w);
    for i in 0..h * w {
        let min_synth = synth_losses
            .iter()
            .filter(|m| m.valid().get_flat(i))
            .map(|m| m.values()[i])
            .fold(f64::INFINITY, f64::min);
        if min_synth.is_infinite() {
            continue;
        }
        let min_identity = identity_losses
            .iter()
            .filter(|m| m.valid().get_flat(i))
            .map(|m| m.values()[i])
            .fold(f64::INFINITY, f64::min);
        if min_synth < min_identity {
            keep.set(i / w, i % w, true);
        }
    }
    keep
}

/// Mean channel-absolute forward difference of `img` along `axis` at `(r, c)`.
#[inline]
fn image_grad(img: &ImageBuffer, r: usize, c: usize, dr: usize, dc: usize) -> f64 {
    let channels = img.channels();
    let mut acc = 0.0;
    for ch in 0..channels {
        acc += (img.get(r + dr, c + dc, ch) - img.get(r, c, ch)).abs();
    }
    acc / channels as f64
}

/// Edge-aware smoothness of mean-normalized disparity:
/// `mean |dx d_bar| e^{-|dx I|} + mean |dy d_bar| e^{-|dy I|}`.
pub fn smoothness(disp: &DisparityField, img: &ImageBuffer) -> f64 {
    smoothness_with_grad(disp, img).0
}

/// Smoothness value plus its gradient with respect to the raw disparity,
/// including the coupling through the normalizing mean.
pub fn smoothness_with_grad(disp: &DisparityField, img: &ImageBuffer) -> (f64, Vec<f64>) {
    let (h, w) = (disp.height(), disp.width());
    assert_eq!(
        (img.height(), img.width()),
        (h, w),
        "disparity/image shape mismatch"
    );
    let n = (h * w) as f64;
    let mean: f64 = disp.values().iter().sum::<f64>() / n;
    let mut grad = vec![0.0; h * w];
    let mut acc = 0.0;
    let nx = (h * (w - 1)).max(1) as f64;
    let ny = ((h - 1) * w).max(1) as f64;
    for r in 0..h {
        for c in 0..w {
            if c + 1 < w {
                let weight = (-image_grad(img, r, c, 0, 1)).exp() / nx;
                let delta = disp.get(r, c + 1) - disp.get(r, c);
                acc += weight * delta.abs();
                let s = weight * sign(delta);
                grad[r * w + c + 1] += s;
                grad[r * w + c] -= s;
            }
            if r + 1 < h {
                let weight = (-image_grad(img, r, c, 1, 0)).exp() / ny;
                let delta = disp.get(r + 1, c) - disp.get(r, c);
                acc += weight * delta.abs();
                let s = weight * sign(delta);
                grad[(r + 1) * w + c] += s;
                grad[r * w + c] -= s;
            }
        }
    }
    let value = acc / mean;
    // d(acc/mean)/dd = grad/mean - acc/(mean^2 N).
    let mean_term = value / (mean * n);
    for g in grad.iter_mut() {
        *g = *g / mean - mean_term;
    }
    (value, grad)
}

/// Full objective and its gradient with respect to every scene parameter.
///
/// `identity_losses`, when supplied, must be `photometric_loss(target,
/// support_k, all-true)` for each support; they are constant across an
/// optimization run, so callers may cache them.
pub fn total_loss_with_identity(
    state: &SceneState,
    target: &ImageBuffer,
    supports: &[ImageBuffer],
    config: &LossConfig,
    identity_losses: Option<&[LossMap]>,
) -> Result<(LossReport, LossGradients), LossError> {
    if supports.is_empty() {
        return Err(LossError::NoSupport);
    }
    let (h, w) = (target.height(), target.width());
    if (state.height(), state.width()) != (h, w) {
        return Err(LossError::StateShapeMismatch {
            state_height: state.height(),
            state_width: state.width(),
            height: h,
            width: w,
        });
    }
    for (index, s) in supports.iter().enumerate() {
        if !s.same_shape(target) {
            return Err(LossError::SupportShapeMismatch { index });
        }
    }
    let n_pixels = h * w;
    let disp = state.disparity();
    let depth = state.depth_map();
    let k = state.intrinsics();
    let poses = state.poses();
    assert_eq!(poses.len(), supports.len(), "one pose per support frame");

    let all_true = BoolMask::all_true(h, w);
    let mut synth_losses = Vec::with_capacity(supports.len());
    let mut synths = Vec::with_capacity(supports.len());
    let mut masks = Vec::with_capacity(supports.len());
    let mut flows_jac = Vec::with_capacity(supports.len());
    let mut sample_grads = Vec::with_capacity(supports.len());
    for (support, pose) in supports.iter().zip(&poses) {
        let (flow, jac) = reproject_with_jacobian(&depth, pose, &k);
        let (synth, mask, sgrad) = bilinear_sample_with_grad(support, &flow);
        synth_losses.push(photometric_loss(target, &synth, &mask, config.lambda)?);
        synths.push(synth);
        masks.push(mask);
        flows_jac.push(jac);
        sample_grads.push(sgrad);
    }

    let owned_identity: Option<Vec<LossMap>> = if config.automask && identity_losses.is_none() {
        let mut v = Vec::with_capacity(supports.len());
        for support in supports {
            v.push(photometric_loss(target, support, &all_true, config.lambda)?);
        }
        Some(v)
    } else {
        None
    };

    let (min_map, argmin) = min_reconstruction(&synth_losses)?;
    let kept = if config.automask {
        let identity = identity_losses.unwrap_or_else(|| owned_identity.as_deref().unwrap());
        automask(&synth_losses, identity).and(min_map.valid())
    } else {
        min_map.valid().clone()
    };
    let n_kept = kept.count_true();
    let all_masked = n_kept == 0;
    let mut histogram = vec![0usize; supports.len()];
    let mut reconstruction = 0.0;
    if !all_masked {
        for i in 0..n_pixels {
            if kept.get_flat(i) {
                reconstruction += min_map.values()[i];
                if let Some(kk) = argmin[i] {
                    histogram[kk] += 1;
                }
            }
        }
        reconstruction /= n_kept as f64;
    }

    let (smooth_value, smooth_grad_disp) = smoothness_with_grad(&disp, target);
    let total = reconstruction + config.smoothness_weight * smooth_value;

    // Backward pass. The kept/argmin selection weights are frozen.
    let inv_kept = if all_masked { 0.0 } else { 1.0 / n_kept as f64 };
    let mut d_depth_acc = vec![0.0; n_pixels];
    let mut d_poses = vec![[0.0; 6]; supports.len()];
    let mut d_k = [0.0; 4];
    for (kk, synth) in synths.iter().enumerate() {
        let mut upstream = vec![0.0; n_pixels];
        let mut any = false;
        for i in 0..n_pixels {
            if kept.get_flat(i) && argmin[i] == Some(kk) {
                upstream[i] = inv_kept;
                any = true;
            }
        }
        if !any {
            continue;
        }
        let d_synth = photometric_backward(target, synth, &masks[kk], &upstream, config.lambda);
        let channels = target.channels();
        let sgrad = &sample_grads[kk];
        let jac = &flows_jac[kk];
        for i in 0..n_pixels {
            let mut du = 0.0;
            let mut dv = 0.0;
            for ch in 0..channels {
                let g = d_synth[i * channels + ch];
                if g != 0.0 {
                    du += g * sgrad.du[i * channels + ch];
                    dv += g * sgrad.dv[i * channels + ch];
                }
            }
            if du == 0.0 && dv == 0.0 {
                continue;
            }
            d_depth_acc[i] += du * jac.d_depth[i][0] + dv * jac.d_depth[i][1];
            for p in 0..6 {
                d_poses[kk][p] += du * jac.d_pose[i][0][p] + dv * jac.d_pose[i][1][p];
            }
            for p in 0..4 {
                d_k[p] += du * jac.d_intrinsics[i][0][p] + dv * jac.d_intrinsics[i][1][p];
            }
        }
    }

    let range = state.depth_range();
    let mut d_logits = vec![0.0; n_pixels];
    for i in 0..n_pixels {
        let d = disp.values()[i];
        let d_disp =
            d_depth_acc[i] * range.depth_derivative(d) + config.smoothness_weight * smooth_grad_disp[i];
        d_logits[i] = d_disp * sigmoid_derivative(state.disparity_logits()[i]);
    }
    let raw = state.intrinsics_raw();
    let d_intrinsics_raw = [
        d_k[0] * softplus_derivative(raw[0]) * w as f64,
        d_k[1] * softplus_derivative(raw[1]) * h as f64,
        d_k[2] * sigmoid_derivative(raw[2]) * w as f64,
        d_k[3] * sigmoid_derivative(raw[3]) * h as f64,
    ];

    let report = LossReport {
        total,
        reconstruction,
        smoothness: smooth_value,
        automask_coverage: n_kept as f64 / n_pixels as f64,
        argmin_histogram: histogram,
        all_masked,
        nonfinite_zeroed: 0,
    };
    let gradients = LossGradients {
        disparity_logits: d_logits,
        poses: d_poses,
        intrinsics_raw: d_intrinsics_raw,
    };
    Ok((report, gradients))
}

/// See [`total_loss_with_identity`]; recomputes the un-warped support losses.
pub fn total_loss(
    state: &SceneState,
    target: &ImageBuffer,
    supports: &[ImageBuffer],
    config: &LossConfig,
) -> Result<(LossReport, LossGradients), LossError> {
    total_loss_with_identity(state, target, supports, config, None)
}

/// Forward-pass decomposition used to screen scenes before finite-difference
/// checks: the discrete decisions and how far each sits from flipping.
pub struct LossDiagnostics {
    pub flows: Vec<crate::geometry::FlowField>,
    pub synth_losses: Vec<LossMap>,
    pub identity_losses: Vec<LossMap>,
    pub min_map: LossMap,
    pub argmin: Vec<Option<usize>>,
    pub kept: BoolMask,
}

pub fn loss_diagnostics(
    state: &SceneState,
    target: &ImageBuffer,
    supports: &[ImageBuffer],
    config: &LossConfig,
) -> Result<LossDiagnostics, LossError> {
    let depth = state.depth_map();
    let k = state.intrinsics();
    let poses = state.poses();
    let all_true = BoolMask::all_true(target.height(), target.width());
    let mut flows = Vec::with_capacity(supports.len());
    let mut synth_losses = Vec::with_capacity(supports.len());
    let mut identity_losses = Vec::with_capacity(supports.len());
    for (support, pose) in supports.iter().zip(&poses) {
        let flow = crate::geometry::reproject(&depth, pose, &k);
        let (synth, mask) = crate::geometry::bilinear_sample(support, &flow);
        synth_losses.push(photometric_loss(target, &synth, &mask, config.lambda)?);
        identity_losses.push(photometric_loss(target, support, &all_true, config.lambda)?);
        flows.push(flow);
    }
    let (min_map, argmin) = min_reconstruction(&synth_losses)?;
    let kept = if config.automask {
        automask(&synth_losses, &identity_losses).and(min_map.valid())
    } else {
        min_map.valid().clone()
    };
    Ok(LossDiagnostics {
        flows,
        synth_losses,
        identity_losses,
        min_map,
        argmin,
        kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::{IntrinsicsMode, OptimizerConfig, SceneState};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, channels: usize) -> ImageBuffer {
        let data = (0..h * w * channels)
            .map(|_| rng.random_range(0.1..0.9))
            .collect();
        ImageBuffer::new(h, w, channels, data).unwrap()
    }

    fn random_loss_map(rng: &mut ChaCha8Rng, h: usize, w: usize, with_mask: bool) -> LossMap {
        let values = (0..h * w).map(|_| rng.random_range(0.0..2.0)).collect();
        let valid = if with_mask {
            BoolMask::new(h, w, (0..h * w).map(|_| rng.random_range(0.0..1.0) > 0.2).collect())
        } else {
            BoolMask::all_true(h, w)
        };
        LossMap::new(h, w, values, valid)
    }

    #[test]
    fn default_lambda_is_085() {
        assert_eq!(LossConfig::default().lambda, 0.85);
    }

    #[test]
    fn identical_images_have_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let img = random_image(&mut rng, 8, 10, 3);
        let mask = BoolMask::all_true(8, 10);
        let map = photometric_loss(&img, &img, &mask, 0.85).unwrap();
        for &v in map.values() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn exact_ties_carry_zero_gradient() {
        // A perfectly reconstructed pixel must be a stationary point, so the
        // L1 subgradient at 0 difference and the smoothness subgradient at a
        // constant field are both exactly zero.
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let img = random_image(&mut rng, 8, 10, 3);
        let mask = BoolMask::all_true(8, 10);
        let upstream = vec![1.0; 80];
        for g in photometric_backward(&img, &img, &mask, &upstream, 0.85) {
            assert_eq!(g, 0.0);
        }
        let disp = DisparityField::new(8, 10, vec![0.3; 80]).unwrap();
        let (value, grad) = smoothness_with_grad(&disp, &img);
        assert_eq!(value, 0.0);
        for g in grad {
            assert_eq!(g, 0.0);
        }
    }

    #[test]
    fn constant_black_vs_white_closed_form() {
        let x = ImageBuffer::filled(8, 8, 1, 0.0);
        let y = ImageBuffer::filled(8, 8, 1, 1.0);
        let mask = BoolMask::all_true(8, 8);
        let map = photometric_loss(&x, &y, &mask, 0.85).unwrap();
        let ssim = crate::ssim::SSIM_C1 / (1.0 + crate::ssim::SSIM_C1);
        let expect = 0.85 * (1.0 - ssim) * 0.5 + 0.15;
        for &v in map.values() {
            assert_relative_eq!(v, expect, max_relative = 1e-12);
            assert_relative_eq!(v, 0.57496, max_relative = 1e-4);
        }
    }

    #[test]
    fn min_reconstruction_enumeration() {
        let a = LossMap::new(1, 2, vec![2.0, 5.0], BoolMask::all_true(1, 2));
        let b = LossMap::new(1, 2, vec![3.0, 1.0], BoolMask::all_true(1, 2));
        let (min_map, argmin) = min_reconstruction(&[a, b]).unwrap();
        assert_eq!(min_map.values(), &[2.0, 1.0]);
        assert_eq!(argmin, vec![Some(0), Some(1)]);
    }

    #[test]
    fn min_reconstruction_single_map_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let a = random_loss_map(&mut rng, 5, 7, true);
        let (min_map, argmin) = min_reconstruction(std::slice::from_ref(&a)).unwrap();
        assert_eq!(min_map.valid(), a.valid());
        for (i, am) in argmin.iter().enumerate() {
            assert_eq!(*am, a.valid().get_flat(i).then_some(0));
            // Invalid pixels carry 0, not the input's masked-out value.
            let expect = if a.valid().get_flat(i) { a.values()[i] } else { 0.0 };
            assert_eq!(min_map.values()[i], expect);
        }
    }

    #[test]
    fn min_reconstruction_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..20 {
            let maps: Vec<LossMap> =
                (0..3).map(|_| random_loss_map(&mut rng, 6, 9, true)).collect();
            let (min_map, argmin) = min_reconstruction(&maps).unwrap();
            for i in 0..54 {
                let mut best = f64::INFINITY;
                let mut best_k = None;
                for (kk, m) in maps.iter().enumerate() {
                    if m.valid().get_flat(i) && m.values()[i] < best {
                        best = m.values()[i];
                        best_k = Some(kk);
                    }
                }
                assert_eq!(argmin[i], best_k);
                if best_k.is_some() {
                    assert_eq!(min_map.values()[i], best);
                    assert!(min_map.valid().get_flat(i));
                    for m in &maps {
                        if m.valid().get_flat(i) {
                            assert!(min_map.values()[i] <= m.values()[i]);
                        }
                    }
                } else {
                    assert!(!min_map.valid().get_flat(i));
                }
            }
        }
    }

    #[test]
    fn empty_min_reconstruction_rejected() {
        assert!(matches!(min_reconstruction(&[]), Err(LossError::NoSupport)));
    }

    #[test]
    fn automask_static_and_dominant_cases() {
        let (h, w) = (4, 5);
        let zero = LossMap::new(h, w, vec![0.0; 20], BoolMask::all_true(h, w));
        let synth = LossMap::new(h, w, vec![0.3; 20], BoolMask::all_true(h, w));
        // Identity loss 0 everywhere (static pair): nothing survives.
        let m = automask(std::slice::from_ref(&synth), std::slice::from_ref(&zero));
        assert_eq!(m.count_true(), 0);
        // Warped strictly better everywhere: everything survives.
        let m = automask(std::slice::from_ref(&zero), std::slice::from_ref(&synth));
        assert_eq!(m.count_true(), h * w);
    }

    #[test]
    fn automask_matches_brute_force_and_is_scale_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        for _ in 0..20 {
            let synth: Vec<LossMap> =
                (0..2).map(|_| random_loss_map(&mut rng, 5, 6, true)).collect();
            let identity: Vec<LossMap> =
                (0..2).map(|_| random_loss_map(&mut rng, 5, 6, false)).collect();
            let mask = automask(&synth, &identity);
            for i in 0..30 {
                let ms = synth
                    .iter()
                    .filter(|m| m.valid().get_flat(i))
                    .map(|m| m.values()[i])
                    .fold(f64::INFINITY, f64::min);
                let mi = identity
                    .iter()
                    .map(|m| m.values()[i])
                    .fold(f64::INFINITY, f64::min);
                assert_eq!(mask.get_flat(i), ms.is_finite() && ms < mi);
            }
            let scaled_mask = automask(
                &synth.iter().map(|m| m.scaled(3.7)).collect::<Vec<_>>(),
                &identity.iter().map(|m| m.scaled(3.7)).collect::<Vec<_>>(),
            );
            assert_eq!(mask, scaled_mask);
        }
    }

    #[test]
    fn smoothness_constant_disparity_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let img = random_image(&mut rng, 6, 8, 3);
        let disp = DisparityField::new(6, 8, vec![0.4; 48]).unwrap();
        assert_eq!(smoothness(&disp, &img), 0.0);
    }

    #[test]
    fn smoothness_ramp_closed_form() {
        let (h, w) = (5, 9);
        let img = ImageBuffer::filled(h, w, 1, 0.5);
        let (a, b) = (0.2, 0.05);
        let values: Vec<f64> = (0..h * w).map(|i| a + b * (i % w) as f64).collect();
        let disp = DisparityField::new(h, w, values).unwrap();
        let mean = a + b * (w - 1) as f64 / 2.0;
        assert_relative_eq!(smoothness(&disp, &img), b / mean, max_relative = 1e-12);
    }

    #[test]
    fn image_edges_attenuate_smoothness() {
        let (h, w) = (5, 9);
        let flat = ImageBuffer::filled(h, w, 1, 0.5);
        let edged = ImageBuffer::from_fn_clamped(h, w, 1, |_, c, _| if c < 4 { 0.1 } else { 0.9 });
        let values: Vec<f64> = (0..h * w).map(|i| 0.2 + 0.05 * (i % w) as f64).collect();
        let disp = DisparityField::new(h, w, values).unwrap();
        assert!(smoothness(&disp, &edged) < smoothness(&disp, &flat));
    }

    #[test]
    fn smoothness_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let (h, w) = (6, 7);
        let img = random_image(&mut rng, h, w, 3);
        let values: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.2..0.8)).collect();
        let disp = DisparityField::new(h, w, values.clone()).unwrap();
        let (_, grad) = smoothness_with_grad(&disp, &img);
        let step = 1e-7;
        for i in 0..h * w {
            let mut vp = values.clone();
            let mut vm = values.clone();
            vp[i] += step;
            vm[i] -= step;
            let fp = smoothness(&DisparityField::new(h, w, vp).unwrap(), &img);
            let fm = smoothness(&DisparityField::new(h, w, vm).unwrap(), &img);
            let fd = (fp - fm) / (2.0 * step);
            assert_relative_eq!(grad[i], fd, max_relative = 1e-5, epsilon = 1e-9);
        }
    }

    #[test]
    fn static_pair_masks_everything_and_zeroes_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let (h, w) = (12, 16);
        let target = random_image(&mut rng, h, w, 3);
        let supports = vec![target.clone()];
        let mut config = OptimizerConfig::default();
        config.intrinsics_mode = IntrinsicsMode::Fixed;
        let mut state = SceneState::init(h, w, 1, &config);
        // Arbitrary imperfect depth and motion.
        for (i, l) in state.disparity_logits_mut().iter_mut().enumerate() {
            *l += ((i % 7) as f64 - 3.0) * 0.2;
        }
        state.poses_mut()[0] = [0.01, -0.02, 0.005, 0.05, 0.02, -0.03];
        let (report, _) =
            total_loss(&state, &target, &supports, &LossConfig::default()).unwrap();
        assert_eq!(report.automask_coverage, 0.0);
        assert_eq!(report.reconstruction, 0.0);
        assert!(report.all_masked);
        assert_eq!(report.total, 1e-3 * report.smoothness);
    }
}
