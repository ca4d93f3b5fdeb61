//! Direct scene optimization: per-pixel disparity logits, one 6-DoF pose per
//! support frame, and normalized intrinsics, all updated by Adam against the
//! photometric objective in [`crate::losses`].
//!
//! There is no network here. The parameter bundle is the scene itself, which
//! keeps every gradient checkable against finite differences and makes
//! convergence failures attributable to the loss rather than to capacity.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Intrinsics;
use crate::depth::{DepthMap, DepthRange, DisparityField};
use crate::image::ImageBuffer;
use crate::losses::{
    photometric_loss, total_loss_with_identity, LossConfig, LossError, LossMap, LossReport,
};
use crate::math::{logit, sigmoid, softplus, softplus_inv};
use crate::pose::PoseSE3;

/// Realized disparity is clamped to the open unit interval at f64 resolution;
/// a saturated logit carries a vanishing gradient regardless.
const DISPARITY_EPS: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("invalid optimizer config: {reason}")]
    InvalidConfig { reason: &'static str },
    #[error("non-finite {term} loss at iteration {iteration}")]
    NonFiniteLoss {
        term: &'static str,
        iteration: usize,
    },
    #[error("offset magnitude range [{lo}, {hi}] is empty or includes zero")]
    EmptyOffsetRange { lo: i64, hi: i64 },
    #[error("{height}x{width} image cannot support {levels} pyramid levels")]
    ImageTooSmall {
        height: usize,
        width: usize,
        levels: usize,
    },
    #[error("initial state shape does not match the target and support count")]
    InitShapeMismatch,
    #[error("principal point must lie strictly inside the image to normalize")]
    PrincipalPointOnBoundary,
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntrinsicsMode {
    Fixed,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetMode {
    Fixed,
    Randomized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub iterations: usize,
    pub lr_disparity: f64,
    pub lr_pose: f64,
    pub lr_intrinsics: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Fraction of the budget spent linearly ramping the learning rate from 0.
    pub warmup_fraction: f64,
    pub pyramid_levels: usize,
    /// Temporal offsets of the support frames relative to the target, aligned
    /// with the support list handed to [`optimize`].
    pub support_offsets: Vec<i64>,
    pub loss: LossConfig,
    pub intrinsics_mode: IntrinsicsMode,
    /// When set, translation along the optical axis is clamped after each step
    /// so the camera cannot move backward relative to the frame order.
    pub forward_motion_constraint: bool,
    pub depth_min: f64,
    pub depth_max: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            lr_disparity: 1e-2,
            lr_pose: 1e-3,
            lr_intrinsics: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            warmup_fraction: 0.05,
            pyramid_levels: 1,
            support_offsets: vec![-1, 1],
            loss: LossConfig::default(),
            intrinsics_mode: IntrinsicsMode::Fixed,
            forward_motion_constraint: false,
            depth_min: 0.1,
            depth_max: 100.0,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let reason = if self.iterations == 0 {
            Some("iterations must be at least 1")
        } else if self.pyramid_levels == 0 {
            Some("pyramid levels must be at least 1")
        } else if ![self.lr_disparity, self.lr_pose, self.lr_intrinsics]
            .iter()
            .all(|lr| lr.is_finite() && *lr >= 0.0)
        {
            Some("learning rates must be finite and non-negative")
        } else if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            Some("Adam betas must lie in [0, 1)")
        } else if !(self.epsilon > 0.0) {
            Some("Adam epsilon must be positive")
        } else if !(0.0..=1.0).contains(&self.warmup_fraction) {
            Some("warmup fraction must lie in [0, 1]")
        } else if self.support_offsets.is_empty() || self.support_offsets.contains(&0) {
            Some("support offsets must be nonempty and exclude 0")
        } else if !(self.depth_min > 0.0 && self.depth_min < self.depth_max)
            || !self.depth_max.is_finite()
        {
            Some("depth range must satisfy 0 < min < max < inf")
        } else if !(self.loss.lambda >= 0.0 && self.loss.lambda <= 1.0) {
            Some("loss lambda must lie in [0, 1]")
        } else {
            None
        };
        match reason {
            Some(reason) => Err(OptimizerError::InvalidConfig { reason }),
            None => Ok(()),
        }
    }

    pub fn depth_range(&self) -> DepthRange {
        DepthRange::new(self.depth_min, self.depth_max).expect("validated range")
    }
}

/// `fx = softplus(fx_raw) * width`, `fy = softplus(fy_raw) * height`,
/// `cx = sigmoid(cx_raw) * width`, `cy = sigmoid(cy_raw) * height`.
/// Valid intrinsics for any finite raw values, differentiable everywhere.
pub fn intrinsics_from_raw(raw: [f64; 4], width: usize, height: usize) -> Intrinsics {
    Intrinsics::new(
        softplus(raw[0]) * width as f64,
        softplus(raw[1]) * height as f64,
        sigmoid(raw[2]) * width as f64,
        sigmoid(raw[3]) * height as f64,
        width,
        height,
    )
    .expect("softplus/sigmoid ranges satisfy the intrinsics invariants")
}

/// Inverse of [`intrinsics_from_raw`]. The principal point must lie strictly
/// inside the image; the sigmoid never reaches the boundary.
pub fn raw_from_intrinsics(k: &Intrinsics) -> Result<[f64; 4], OptimizerError> {
    let (w, h) = (k.width as f64, k.height as f64);
    if !(k.cx > 0.0 && k.cx < w && k.cy > 0.0 && k.cy < h) {
        return Err(OptimizerError::PrincipalPointOnBoundary);
    }
    Ok([
        softplus_inv(k.fx / w),
        softplus_inv(k.fy / h),
        logit(k.cx / w),
        logit(k.cy / h),
    ])
}

/// Temporal support offsets. Fixed mode is the `(-1, +1)` adjacent-frame pair;
/// randomized mode draws one negative and one positive magnitude uniformly
/// from `[lo, hi]`, negative first.
pub fn sample_support_offsets<R: Rng + ?Sized>(
    rng: &mut R,
    mode: OffsetMode,
    range: (i64, i64),
) -> Result<Vec<i64>, OptimizerError> {
    let (lo, hi) = range;
    if lo < 1 || hi < lo {
        return Err(OptimizerError::EmptyOffsetRange { lo, hi });
    }
    Ok(match mode {
        OffsetMode::Fixed => vec![-1, 1],
        OffsetMode::Randomized => {
            let neg = -rng.random_range(lo..=hi);
            let pos = rng.random_range(lo..=hi);
            vec![neg, pos]
        }
    })
}

/// The optimizer's parameter bundle: raw disparity logits, one axis-angle +
/// translation parameter vector per support frame, raw normalized intrinsics,
/// and the depth range the disparity maps into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    height: usize,
    width: usize,
    disparity_logits: Vec<f64>,
    poses: Vec<[f64; 6]>,
    intrinsics_raw: [f64; 4],
    depth_min: f64,
    depth_max: f64,
}

impl SceneState {
    /// Unbiased start: constant disparity sigmoid^-1(0.3), identity poses,
    /// unit normalized focals, centered principal point.
    pub fn init(height: usize, width: usize, n_supports: usize, config: &OptimizerConfig) -> Self {
        Self {
            height,
            width,
            disparity_logits: vec![logit(0.3); height * width],
            poses: vec![[0.0; 6]; n_supports],
            intrinsics_raw: [softplus_inv(1.0), softplus_inv(1.0), 0.0, 0.0],
            depth_min: config.depth_min,
            depth_max: config.depth_max,
        }
    }

    /// Assemble a state from explicit parameters, e.g. a known ground truth.
    pub fn from_parts(
        height: usize,
        width: usize,
        disparity_logits: Vec<f64>,
        poses: Vec<[f64; 6]>,
        intrinsics_raw: [f64; 4],
        depth_range: DepthRange,
    ) -> Result<Self, OptimizerError> {
        if disparity_logits.len() != height * width {
            return Err(OptimizerError::InitShapeMismatch);
        }
        Ok(Self {
            height,
            width,
            disparity_logits,
            poses,
            intrinsics_raw,
            depth_min: depth_range.min,
            depth_max: depth_range.max,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_supports(&self) -> usize {
        self.poses.len()
    }

    pub fn depth_range(&self) -> DepthRange {
        DepthRange::new(self.depth_min, self.depth_max).expect("state holds a valid range")
    }

    pub fn disparity_logits(&self) -> &[f64] {
        &self.disparity_logits
    }

    pub fn disparity_logits_mut(&mut self) -> &mut [f64] {
        &mut self.disparity_logits
    }

    pub fn pose_params(&self) -> &[[f64; 6]] {
        &self.poses
    }

    pub fn poses_mut(&mut self) -> &mut [[f64; 6]] {
        &mut self.poses
    }

    pub fn intrinsics_raw(&self) -> [f64; 4] {
        self.intrinsics_raw
    }

    pub fn intrinsics_raw_mut(&mut self) -> &mut [f64; 4] {
        &mut self.intrinsics_raw
    }

    /// Overwrite the raw intrinsics so they realize `k` exactly.
    pub fn set_intrinsics(&mut self, k: &Intrinsics) -> Result<(), OptimizerError> {
        self.intrinsics_raw = raw_from_intrinsics(k)?;
        Ok(())
    }

    pub fn disparity(&self) -> DisparityField {
        let values = self
            .disparity_logits
            .iter()
            .map(|&l| sigmoid(l).clamp(DISPARITY_EPS, 1.0 - DISPARITY_EPS))
            .collect();
        DisparityField::new(self.height, self.width, values)
            .expect("clamped sigmoid stays inside (0, 1)")
    }

    pub fn depth_map(&self) -> DepthMap {
        let range = self.depth_range();
        let values = self
            .disparity()
            .values()
            .iter()
            .map(|&d| range.depth_of(d))
            .collect();
        DepthMap::new(self.height, self.width, values).expect("range keeps depth positive")
    }

    pub fn intrinsics(&self) -> Intrinsics {
        intrinsics_from_raw(self.intrinsics_raw, self.width, self.height)
    }

    pub fn poses(&self) -> Vec<PoseSE3> {
        self.poses.iter().map(|p| PoseSE3::from_params(*p)).collect()
    }

    /// Jointly scale all depths and translations by `s > 0`, the monocular
    /// gauge freedom. Scaled depths must stay strictly inside the depth range.
    pub fn with_scaled_geometry(&self, s: f64) -> SceneState {
        assert!(s > 0.0 && s.is_finite());
        let range = self.depth_range();
        let mut out = self.clone();
        for (l, &old) in out
            .disparity_logits
            .iter_mut()
            .zip(self.disparity_logits.iter())
        {
            let depth = range.depth_of(sigmoid(old).clamp(DISPARITY_EPS, 1.0 - DISPARITY_EPS)) * s;
            assert!(
                depth > self.depth_min && depth < self.depth_max,
                "scaled depth {depth} leaves ({}, {})",
                self.depth_min,
                self.depth_max
            );
            *l = logit(range.disparity_of(depth));
        }
        for p in out.poses.iter_mut() {
            p[3] *= s;
            p[4] *= s;
            p[5] *= s;
        }
        out
    }
}

/// Warmup ramps linearly over the first `warmup_fraction` of the budget; the
/// final third of iterations runs at a tenth of the base rate.
fn lr_multiplier(iteration: usize, total: usize, warmup_fraction: f64) -> f64 {
    let warmup = (total as f64 * warmup_fraction).ceil() as usize;
    let base = if warmup > 0 && iteration < warmup {
        (iteration + 1) as f64 / warmup as f64
    } else {
        1.0
    };
    if iteration >= total - total / 3 {
        base * 0.1
    } else {
        base
    }
}

/// Zero non-finite entries in place, returning how many were zeroed.
fn zero_nonfinite(grad: &mut [f64]) -> usize {
    let mut count = 0;
    for g in grad.iter_mut() {
        if !g.is_finite() {
            *g = 0.0;
            count += 1;
        }
    }
    count
}

fn check_finite(report: &LossReport, iteration: usize) -> Result<(), OptimizerError> {
    for (term, value) in [
        ("reconstruction", report.reconstruction),
        ("smoothness", report.smoothness),
        ("total", report.total),
    ] {
        if !value.is_finite() {
            return Err(OptimizerError::NonFiniteLoss { term, iteration });
        }
    }
    Ok(())
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl AdamState {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, config: &OptimizerConfig) {
        self.t += 1;
        let bc1 = 1.0 - config.beta1.powi(self.t as i32);
        let bc2 = 1.0 - config.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = config.beta1 * self.m[i] + (1.0 - config.beta1) * g;
            self.v[i] = config.beta2 * self.v[i] + (1.0 - config.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
}

fn run(
    target: &ImageBuffer,
    supports: &[ImageBuffer],
    config: &OptimizerConfig,
    iterations: usize,
    mut state: SceneState,
) -> Result<(SceneState, Vec<LossReport>), OptimizerError> {
    if state.height() != target.height()
        || state.width() != target.width()
        || state.n_supports() != supports.len()
    {
        return Err(OptimizerError::InitShapeMismatch);
    }
    let identity_losses: Option<Vec<LossMap>> = if config.loss.automask {
        let all = crate::image::BoolMask::all_true(target.height(), target.width());
        let mut maps = Vec::with_capacity(supports.len());
        for s in supports {
            maps.push(photometric_loss(target, s, &all, config.loss.lambda)?);
        }
        Some(maps)
    } else {
        None
    };

    let n_pose = supports.len() * 6;
    let mut adam_disp = AdamState::new(state.disparity_logits.len());
    let mut adam_pose = AdamState::new(n_pose);
    let mut adam_k = AdamState::new(4);
    let mut trace = Vec::with_capacity(iterations);
    for iteration in 0..iterations {
        let (mut report, mut grads) = total_loss_with_identity(
            &state,
            target,
            supports,
            &config.loss,
            identity_losses.as_deref(),
        )?;
        check_finite(&report, iteration)?;
        let mut zeroed = zero_nonfinite(&mut grads.disparity_logits);
        for p in grads.poses.iter_mut() {
            zeroed += zero_nonfinite(p);
        }
        zeroed += zero_nonfinite(&mut grads.intrinsics_raw);
        report.nonfinite_zeroed = zeroed;
        trace.push(report);

        let mult = lr_multiplier(iteration, iterations, config.warmup_fraction);
        adam_disp.step(
            &mut state.disparity_logits,
            &grads.disparity_logits,
            config.lr_disparity * mult,
            config,
        );
        let mut pose_flat: Vec<f64> = state.poses.iter().flatten().copied().collect();
        let pose_grad: Vec<f64> = grads.poses.iter().flatten().copied().collect();
        adam_pose.step(&mut pose_flat, &pose_grad, config.lr_pose * mult, config);
        for (i, p) in state.poses.iter_mut().enumerate() {
            p.copy_from_slice(&pose_flat[i * 6..(i + 1) * 6]);
        }
        if config.intrinsics_mode == IntrinsicsMode::Learned {
            adam_k.step(
                &mut state.intrinsics_raw,
                &grads.intrinsics_raw,
                config.lr_intrinsics * mult,
                config,
            );
        }
        if config.forward_motion_constraint {
            // Target-to-support convention: forward camera motion toward a
            // later frame (k > 0) means negative optical-axis translation.
            for (pose, &k) in state.poses.iter_mut().zip(&config.support_offsets) {
                if k > 0 {
                    pose[5] = pose[5].min(0.0);
                } else {
                    pose[5] = pose[5].max(0.0);
                }
            }
        }
    }
    Ok((state, trace))
}

/// Minimize the total loss over `config.iterations` Adam steps, starting from
/// `init` or the default state. Deterministic: the trace and final state are
/// bit-identical across runs with the same inputs.
pub fn optimize(
    target: &ImageBuffer,
    supports: &[ImageBuffer],
    config: &OptimizerConfig,
    init: Option<SceneState>,
) -> Result<(SceneState, Vec<LossReport>), OptimizerError> {
    config.validate()?;
    if supports.is_empty() {
        return Err(OptimizerError::Loss(LossError::NoSupport));
    }
    let state = init
        .unwrap_or_else(|| SceneState::init(target.height(), target.width(), supports.len(), config));
    run(target, supports, config, config.iterations, state)
}

/// Pyramid schedule: optimize at each level from coarsest to finest, splitting
/// the iteration budget evenly (remainder to the finest level) and upsampling
/// disparity logits bilinearly between levels. Poses and normalized intrinsics
/// transfer unchanged. One level reproduces [`optimize`] bit for bit.
pub fn coarse_to_fine(
    target: &ImageBuffer,
    supports: &[ImageBuffer],
    config: &OptimizerConfig,
) -> Result<(SceneState, Vec<LossReport>), OptimizerError> {
    config.validate()?;
    if supports.is_empty() {
        return Err(OptimizerError::Loss(LossError::NoSupport));
    }
    let levels = config.pyramid_levels;
    if levels == 1 {
        return optimize(target, supports, config, None);
    }
    let (h, w) = (target.height(), target.width());
    if h >> (levels - 1) == 0 || w >> (levels - 1) == 0 {
        return Err(OptimizerError::ImageTooSmall {
            height: h,
            width: w,
            levels,
        });
    }
    let mut target_pyr = vec![target.clone()];
    let mut support_pyr = vec![supports.to_vec()];
    for j in 1..levels {
        target_pyr.push(target_pyr[j - 1].downsample2());
        support_pyr.push(support_pyr[j - 1].iter().map(|s| s.downsample2()).collect());
    }

    let per_level = config.iterations / levels;
    let finest_budget = config.iterations - per_level * (levels - 1);
    let coarsest = &target_pyr[levels - 1];
    let mut state = SceneState::init(coarsest.height(), coarsest.width(), supports.len(), config);
    let mut trace = Vec::with_capacity(config.iterations);
    for j in (0..levels).rev() {
        let budget = if j == 0 { finest_budget } else { per_level };
        let (next, level_trace) =
            run(&target_pyr[j], &support_pyr[j], config, budget, state)?;
        trace.extend(level_trace);
        state = next;
        if j > 0 {
            let (nh, nw) = (target_pyr[j - 1].height(), target_pyr[j - 1].width());
            let logits = crate::image::resize_plane_bilinear(
                &state.disparity_logits,
                state.height,
                state.width,
                nh,
                nw,
            );
            state.height = nh;
            state.width = nw;
            state.disparity_logits = logits;
        }
    }
    Ok((state, trace))
}
